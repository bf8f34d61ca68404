"""Steady states: Newton solving, one-parameter pseudo-arclength
continuation in theta0 with limit-point / Hopf detection, and
two-parameter continuation of the fold and Hopf loci in the
(gamma, theta0) plane.

Test functions along a branch: the fold test is the sign of det(J)
(equal to the sign of the product of the real eigenvalues, since
complex pairs contribute positive factors); the Hopf test is the
largest real part over complex eigenvalue pairs, tracked with pair
matching between consecutive points.  Detected sign changes are
refined by bisection in arclength and then polished with the
corresponding augmented system so the labeled point satisfies the
defining equations to solver tolerance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .collocation import (
    CollocationGrid,
    PelletState,
    eta_of_vector,
    isothermal_profile,
    jac_dgamma,
    jac_dir_deriv,
    jac_dtheta0,
    jac_vec,
    rhs_dgamma,
    rhs_dtheta0,
    rhs_vec,
)
from .errors import ConvergenceError, StepSizeUnderflow
from .model import ModelParams, theta_from_z

__all__ = [
    "Stability",
    "PointLabel",
    "LocusKind",
    "BranchPoint",
    "Branch",
    "LocusPoint",
    "TwoParamLocus",
    "newton_steady",
    "find_steady_states",
    "continue_branch",
    "continue_lp_locus",
    "continue_hb_locus",
]

_IM_TOL = 1e-9  # below this an eigenvalue counts as real


class Stability(str, enum.Enum):
    STABLE = "stable"
    SADDLE = "saddle"
    UNSTABLE_FOCUS_OR_NODE = "unstable-focus-or-node"


class PointLabel(str, enum.Enum):
    REGULAR = "regular"
    LP = "LP"
    HB = "HB"


class LocusKind(str, enum.Enum):
    LP = "LP"
    HB = "HB"
    HCL = "Hcl"


@dataclass(frozen=True)
class BranchPoint:
    """One converged steady state on a continuation branch."""

    theta0: float
    state: PelletState
    eigenvalues: np.ndarray  # complex, sorted by real part descending
    stability: Stability
    label: PointLabel
    eta: float
    theta: float
    omega: float | None = None  # Hopf frequency when label == HB

    @property
    def z(self) -> float:
        return self.state.z


@dataclass
class Branch:
    """Ordered continuation curve of steady states."""

    points: list[BranchPoint]
    step_sizes: list[float] = field(default_factory=list)
    direction: int = +1

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)

    def __getitem__(self, i):
        return self.points[i]

    def labeled(self, label: PointLabel) -> list[BranchPoint]:
        return [p for p in self.points if p.label == label]


@dataclass(frozen=True)
class LocusPoint:
    gamma: float
    theta0: float
    state: PelletState
    omega: float | None = None


@dataclass
class TwoParamLocus:
    """A curve of codimension-one bifurcation points in (gamma, theta0)."""

    kind: LocusKind
    points: list[LocusPoint]
    cusps: list[tuple[float, float]] = field(default_factory=list)
    double_zeros: list[tuple[float, float]] = field(default_factory=list)
    end_reason: str = ""

    def gamma_values(self) -> np.ndarray:
        return np.array([p.gamma for p in self.points])

    def theta0_values(self) -> np.ndarray:
        return np.array([p.theta0 for p in self.points])


# ---------------------------------------------------------------------------
# Newton for steady states
# ---------------------------------------------------------------------------

def newton_vec(
    u0: np.ndarray,
    params: ModelParams,
    grid: CollocationGrid,
    theta0: float | None = None,
    gamma: float | None = None,
    tol: float = 1e-11,
    max_iter: int = 30,
):
    """Plain Newton on the packed state vector.  Returns (u, converged)."""
    u = np.asarray(u0, dtype=float).copy()
    for _ in range(max_iter):
        r = rhs_vec(u, params, grid, theta0=theta0, gamma=gamma)
        if np.max(np.abs(r)) < tol:
            return u, True
        jac = jac_vec(u, params, grid, theta0=theta0, gamma=gamma)
        try:
            du = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            return u, False
        if not np.all(np.isfinite(du)):
            return u, False
        u = u + du
    r = rhs_vec(u, params, grid, theta0=theta0, gamma=gamma)
    return u, bool(np.max(np.abs(r)) < tol)


def newton_steady(
    guess: PelletState,
    params: ModelParams,
    grid: CollocationGrid,
    tol: float = 1e-11,
    max_iter: int = 30,
) -> PelletState:
    """Solve the steady-state equations from the given guess.

    Raises
    ------
    ConvergenceError
        After ``max_iter`` iterations without reaching the tolerance
        (bad guess or near-singular Jacobian).
    """
    u, ok = newton_vec(guess.to_vector(), params, grid, tol=tol, max_iter=max_iter)
    if not ok:
        raise ConvergenceError(
            f"steady-state Newton did not reach tol={tol} in {max_iter} iterations "
            f"(theta0={params.theta0}, gamma={params.gamma})"
        )
    return PelletState.from_vector(u)


def _seed_vector(z0: float, params: ModelParams, grid: CollocationGrid,
                 theta0: float | None = None) -> np.ndarray:
    """Seed with the isothermal profile shape at the z-consistent modulus."""
    th0 = params.theta0 if theta0 is None else theta0
    theta_eff = theta_from_z(z0, th0, params.gamma)
    return np.concatenate([isothermal_profile(theta_eff, grid), [z0]])


def find_steady_states(
    params: ModelParams,
    grid: CollocationGrid,
    z_seeds=(1.01, 1.2, 1.5),
    theta0: float | None = None,
    tol: float = 1e-11,
) -> list[PelletState]:
    """All steady states reachable from the low/middle/high z seed ladder.

    Newton starts from each seed temperature with the matching
    isothermal profile shape.  Because the middle (saddle) state has a
    thin Newton basin, a bisection in seed temperature between every
    adjacent pair of distinct solutions hunts for states the ladder
    missed.  Results are sorted by z.
    """
    found: list[np.ndarray] = []

    def _try(z0: float):
        try:
            u, ok = newton_vec(_seed_vector(z0, params, grid, theta0), params, grid,
                               theta0=theta0, tol=tol)
        except ValueError:
            return
        if ok and u[-1] > 0 and np.all(u[:-1] > -1e-12):
            for v in found:
                if np.max(np.abs(v - u)) < 1e-7:
                    return
            found.append(u)

    for z0 in z_seeds:
        _try(z0)
    # midpoint search between adjacent distinct states (saddle hunting)
    for _ in range(3):
        found.sort(key=lambda v: v[-1])
        n_before = len(found)
        zs = [v[-1] for v in found]
        for lo, hi in zip(zs[:-1], zs[1:]):
            if hi - lo < 1e-6:
                continue
            for frac in (0.5, 0.25, 0.75, 0.375, 0.625):
                _try(lo + frac * (hi - lo))
        if len(found) == n_before:
            break
    found.sort(key=lambda v: v[-1])
    return [PelletState.from_vector(v) for v in found]


# ---------------------------------------------------------------------------
# Eigenvalue bookkeeping
# ---------------------------------------------------------------------------

def _sorted_eigvals(jac: np.ndarray) -> np.ndarray:
    ev = np.linalg.eigvals(jac)
    return ev[np.argsort(-ev.real)]


def _classify(ev: np.ndarray) -> Stability:
    pos = ev[ev.real > 0]
    if len(pos) == 0:
        return Stability.STABLE
    n_real_pos = int(np.sum(np.abs(pos.imag) <= _IM_TOL))
    if n_real_pos % 2 == 1:
        return Stability.SADDLE
    return Stability.UNSTABLE_FOCUS_OR_NODE


def _det_sign(jac: np.ndarray) -> float:
    sign, _ = np.linalg.slogdet(jac)
    return sign


def _hopf_test(ev: np.ndarray):
    """Largest real part over complex pairs, or None if all real."""
    cplx = ev[ev.imag > _IM_TOL]  # one of each conjugate pair
    if len(cplx) == 0:
        return None, None
    i = int(np.argmax(cplx.real))
    return float(cplx[i].real), complex(cplx[i])


def _pairs_match(ev_a: np.ndarray, ev_b: np.ndarray, lam_a: complex, lam_b: complex) -> bool:
    """Check the crossing pair keeps its identity between two points."""
    cplx_b = ev_b[ev_b.imag > _IM_TOL]
    if len(cplx_b) == 0:
        return False
    nearest = cplx_b[np.argmin(np.abs(cplx_b - lam_a))]
    return abs(nearest - lam_b) <= 1e-9 + 0.5 * abs(lam_b - lam_a)


def _make_point(
    u: np.ndarray,
    th0: float,
    params: ModelParams,
    grid: CollocationGrid,
    label: PointLabel = PointLabel.REGULAR,
    omega: float | None = None,
) -> BranchPoint:
    jac = jac_vec(u, params, grid, theta0=th0)
    ev = _sorted_eigvals(jac)
    state = PelletState.from_vector(u)
    return BranchPoint(
        theta0=float(th0),
        state=state,
        eigenvalues=ev,
        stability=_classify(ev),
        label=label,
        eta=eta_of_vector(u, grid),
        theta=theta_from_z(state.z, th0, params.gamma),
        omega=omega,
    )


# ---------------------------------------------------------------------------
# One-parameter pseudo-arclength continuation
# ---------------------------------------------------------------------------

def _corrector(x_pred, tangent, x_prev, ds, params, grid, tol, max_iter=8):
    """Newton on [rhs; tangent . (x - x_prev) - ds] around the predictor.

    x = (state vector, theta0).  Returns (x, n_iter) or (None, max_iter).
    """
    n = len(x_pred) - 1
    x = x_pred.copy()
    for it in range(max_iter):
        r = rhs_vec(x[:n], params, grid, theta0=x[n])
        g = tangent @ (x - x_prev) - ds
        if np.max(np.abs(r)) < tol and abs(g) < 1e-12:
            return x, it
        jac = np.empty((n + 1, n + 1))
        jac[:n, :n] = jac_vec(x[:n], params, grid, theta0=x[n])
        jac[:n, n] = rhs_dtheta0(x[:n], params, grid, theta0=x[n])
        jac[n, :] = tangent
        try:
            dx = np.linalg.solve(jac, -np.concatenate([r, [g]]))
        except np.linalg.LinAlgError:
            return None, max_iter
        if not np.all(np.isfinite(dx)):
            return None, max_iter
        x = x + dx
    return None, max_iter


def continue_branch(
    params: ModelParams,
    theta0_range: tuple[float, float],
    seed: PelletState,
    grid: CollocationGrid,
    *,
    initial_step: float = 1e-3,
    max_step: float = 5e-2,
    min_step: float = 1e-9,
    grow: float = 1.3,
    shrink: float = 0.5,
    fast_iters: int = 3,
    newton_tol: float = 1e-11,
    refine_tol: float = 1e-10,
    max_points: int = 100_000,
) -> Branch:
    """Trace the steady-state branch over a theta0 window.

    Secant-predictor / Newton-corrector pseudo-arclength continuation.
    Every accepted point carries the Jacobian spectrum; sign changes of
    the fold and Hopf test functions between consecutive points are
    refined by bisection in arclength and polished with the augmented
    fold/Hopf system, and the polished point is inserted with its LP/HB
    label.  Traversal stops when theta0 leaves the window, which a fold
    may legitimately route through the starting end.

    Raises
    ------
    ConvergenceError
        If the seed does not converge at the window start.
    StepSizeUnderflow
        If the corrector keeps failing at the minimum step (an
        unresolvable singularity on the branch).
    """
    lo, hi = (min(theta0_range), max(theta0_range))
    th_start, th_end = theta0_range
    direction = +1 if th_end >= th_start else -1

    u0, ok = newton_vec(seed.to_vector(), params, grid, theta0=th_start, tol=newton_tol)
    if not ok:
        raise ConvergenceError(f"branch seed did not converge at theta0={th_start}")

    n = grid.size
    # natural-parameter tangent at the first point
    jac = jac_vec(u0, params, grid, theta0=th_start)
    du = np.linalg.solve(jac, -rhs_dtheta0(u0, params, grid, theta0=th_start))
    tangent = np.concatenate([du, [1.0]])
    tangent = direction * tangent / np.linalg.norm(tangent)

    x = np.concatenate([u0, [th_start]])
    points = [_make_point(u0, th_start, params, grid)]
    steps: list[float] = []
    ds = initial_step

    while len(points) < max_points:
        x_pred = x + ds * tangent
        x_new, iters = _corrector(x_pred, tangent, x, ds, params, grid, newton_tol)
        if x_new is None:
            ds *= shrink
            if ds < min_step:
                raise StepSizeUnderflow(
                    f"continuation step underflow at theta0={x[n]:.8g}"
                )
            continue

        pt_new = _make_point(x_new[:n], x_new[n], params, grid)
        prev = points[-1]
        for special in _detect_and_refine(prev, pt_new, x, x_new, params, grid,
                                          newton_tol, refine_tol):
            points.append(special)
        points.append(pt_new)
        steps.append(ds)

        new_tangent = x_new - x
        new_tangent /= np.linalg.norm(new_tangent)
        tangent = new_tangent
        x = x_new
        if iters <= fast_iters:
            ds = min(max_step, ds * grow)

        th = x[n]
        if th < lo - 1e-12 or th > hi + 1e-12:
            break

    return Branch(points=points, step_sizes=steps, direction=direction)


def _detect_and_refine(pt_a, pt_b, x_a, x_b, params, grid, newton_tol, refine_tol):
    """Refine LP/HB test-function sign changes between two accepted points."""
    out = []
    jac_a = jac_vec(x_a[:-1], params, grid, theta0=x_a[-1])
    jac_b = jac_vec(x_b[:-1], params, grid, theta0=x_b[-1])
    det_a, det_b = _det_sign(jac_a), _det_sign(jac_b)
    hb_a, lam_a = _hopf_test(pt_a.eigenvalues)
    hb_b, lam_b = _hopf_test(pt_b.eigenvalues)

    if det_a != 0 and det_b != 0 and det_a != det_b:
        x_lp = _bisect_test(x_a, x_b, params, grid, newton_tol, refine_tol,
                            lambda u, th: _det_sign(jac_vec(u, params, grid, theta0=th)),
                            det_a)
        if x_lp is not None:
            pt = _polish_lp(x_lp, params, grid)
            if pt is not None:
                out.append(pt)

    if (
        hb_a is not None
        and hb_b is not None
        and (hb_a < 0) != (hb_b < 0)
        and _pairs_match(pt_a.eigenvalues, pt_b.eigenvalues, lam_a, lam_b)
    ):
        def hb_sign(u, th):
            val, _ = _hopf_test(_sorted_eigvals(jac_vec(u, params, grid, theta0=th)))
            if val is None:
                return 0.0
            return -1.0 if val < 0 else 1.0

        x_hb = _bisect_test(x_a, x_b, params, grid, newton_tol, refine_tol,
                            hb_sign, -1.0 if hb_a < 0 else 1.0)
        if x_hb is not None:
            pt = _polish_hb(x_hb, params, grid)
            if pt is not None:
                out.append(pt)
    return out


def _bisect_test(x_a, x_b, params, grid, newton_tol, refine_tol, sign_fn, sign_a):
    """Bisection in arclength between two converged points on a branch."""
    n = len(x_a) - 1
    span = x_b - x_a
    length = np.linalg.norm(span)
    tangent = span / length
    t_lo, t_hi = 0.0, length
    x_lo = x_a.copy()
    for _ in range(200):
        th_gap = abs((x_a + t_hi * tangent)[n] - (x_a + t_lo * tangent)[n])
        if t_hi - t_lo < 1e-12 or th_gap < refine_tol:
            break
        t_mid = 0.5 * (t_lo + t_hi)
        x_mid, _ = _corrector(x_a + t_mid * tangent, tangent, x_a, t_mid,
                              params, grid, newton_tol)
        if x_mid is None:
            return None
        s_mid = sign_fn(x_mid[:n], x_mid[n])
        if s_mid == 0.0 or s_mid == sign_a:
            t_lo = t_mid
            x_lo = x_mid
        else:
            t_hi = t_mid
    return x_lo


def _null_vector(jac: np.ndarray) -> np.ndarray:
    """Unit right null-ish vector (eigenvector of the smallest |real| eigenvalue)."""
    lam, vec = np.linalg.eig(jac)
    real = np.abs(lam.imag) <= _IM_TOL
    if np.any(real):
        idx = np.where(real)[0]
        i = idx[np.argmin(np.abs(lam[idx]))]
    else:
        i = int(np.argmin(np.abs(lam)))
    v = vec[:, i].real
    return v / np.linalg.norm(v)


def _polish_lp(x, params, grid, tol=1e-11) -> BranchPoint | None:
    n = len(x) - 1
    jac = jac_vec(x[:n], params, grid, theta0=x[n])
    v = _null_vector(jac)
    sol = _solve_fold(x[:n], v, x[n], params.gamma, params, grid,
                      free="theta0", tol=tol)
    if sol is None:
        return None
    u, v, th0, g = sol
    return _make_point(u, th0, params, grid, label=PointLabel.LP)


def _polish_hb(x, params, grid, tol=1e-11) -> BranchPoint | None:
    n = len(x) - 1
    jac = jac_vec(x[:n], params, grid, theta0=x[n])
    lam, vec = np.linalg.eig(jac)
    cplx = np.where(lam.imag > _IM_TOL)[0]
    if len(cplx) == 0:
        return None
    i = cplx[np.argmin(np.abs(lam[cplx].real))]
    w = vec[:, i]
    omega = float(lam[i].imag)
    wr, wi = _orthonormal_pair(w)
    sol = _solve_hopf(x[:n], wr, wi, omega, x[n], params.gamma, params, grid,
                      free="theta0", tol=tol)
    if sol is None:
        return None
    u, wr, wi, omega, th0, g = sol
    return _make_point(u, th0, params, grid, label=PointLabel.HB, omega=abs(omega))


def _orthonormal_pair(w: np.ndarray):
    """Rotate the complex eigenvector so Re/Im parts are orthogonal, |Re| = 1."""
    wr, wi = w.real, w.imag
    num = 2.0 * wr @ wi
    den = wr @ wr - wi @ wi
    phi = 0.5 * np.arctan2(num, den)
    rot = w * np.exp(-1j * phi)
    wr, wi = rot.real, rot.imag
    nrm = np.linalg.norm(wr)
    if nrm < np.linalg.norm(wi):  # keep the larger part as the anchor
        wr, wi = wi, -wr
        nrm = np.linalg.norm(wr)
    return wr / nrm, wi / nrm


# ---------------------------------------------------------------------------
# Augmented fold / Hopf systems
# ---------------------------------------------------------------------------

def _solve_fold(u0, v0, th0, g0, params, grid, free="theta0", tol=1e-11,
                max_iter=30, c_vec=None):
    """Newton on {rhs = 0, J v = 0, c.v = 1} with one free parameter.

    ``free`` is "theta0" or "gamma"; the other parameter stays fixed.
    Returns (u, v, theta0, gamma) or None.
    """
    n = len(u0)
    c = v0.copy() if c_vec is None else c_vec
    x = np.concatenate([u0, v0, [th0 if free == "theta0" else g0]])
    for _ in range(max_iter):
        u, v, p = x[:n], x[n : 2 * n], x[2 * n]
        th, g = (p, g0) if free == "theta0" else (th0, p)
        jac = jac_vec(u, params, grid, theta0=th, gamma=g)
        r = np.concatenate(
            [rhs_vec(u, params, grid, theta0=th, gamma=g), jac @ v, [c @ v - 1.0]]
        )
        if np.max(np.abs(r)) < tol:
            return u, v, th, g
        big = np.zeros((2 * n + 1, 2 * n + 1))
        big[:n, :n] = jac
        big[n : 2 * n, :n] = jac_dir_deriv(u, v, params, grid, theta0=th, gamma=g)
        big[n : 2 * n, n : 2 * n] = jac
        big[2 * n, n : 2 * n] = c
        if free == "theta0":
            big[:n, 2 * n] = rhs_dtheta0(u, params, grid, theta0=th, gamma=g)
            big[n : 2 * n, 2 * n] = jac_dtheta0(u, params, grid, theta0=th, gamma=g) @ v
        else:
            big[:n, 2 * n] = rhs_dgamma(u, params, grid, theta0=th, gamma=g)
            big[n : 2 * n, 2 * n] = jac_dgamma(u, params, grid, theta0=th, gamma=g) @ v
        try:
            dx = np.linalg.solve(big, -r)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(dx)):
            return None
        x = x + dx
    return None


def _hopf_residual_jac(u, wr, wi, omega, th, g, params, grid, c):
    n = len(u)
    jac = jac_vec(u, params, grid, theta0=th, gamma=g)
    r = np.concatenate(
        [
            rhs_vec(u, params, grid, theta0=th, gamma=g),
            jac @ wr + omega * wi,
            jac @ wi - omega * wr,
            [c @ wr - 1.0],
            [c @ wi],
        ]
    )
    big = np.zeros((3 * n + 2, 3 * n + 1))  # columns: u, wr, wi, omega
    eye = np.eye(n)
    big[:n, :n] = jac
    big[n : 2 * n, :n] = jac_dir_deriv(u, wr, params, grid, theta0=th, gamma=g)
    big[n : 2 * n, n : 2 * n] = jac
    big[n : 2 * n, 2 * n : 3 * n] = omega * eye
    big[n : 2 * n, 3 * n] = wi
    big[2 * n : 3 * n, :n] = jac_dir_deriv(u, wi, params, grid, theta0=th, gamma=g)
    big[2 * n : 3 * n, n : 2 * n] = -omega * eye
    big[2 * n : 3 * n, 2 * n : 3 * n] = jac
    big[2 * n : 3 * n, 3 * n] = -wr
    big[3 * n, n : 2 * n] = c
    big[3 * n + 1, 2 * n : 3 * n] = c
    return r, big, jac


def _solve_hopf(u0, wr0, wi0, omega0, th0, g0, params, grid, free="theta0",
                tol=1e-11, max_iter=30, c_vec=None):
    """Newton on the Hopf system {rhs=0, J w = i omega w, phase, norm}.

    Returns (u, wr, wi, omega, theta0, gamma) or None.
    """
    n = len(u0)
    c = wr0.copy() if c_vec is None else c_vec
    x = np.concatenate([u0, wr0, wi0, [omega0], [th0 if free == "theta0" else g0]])
    for _ in range(max_iter):
        u = x[:n]
        wr = x[n : 2 * n]
        wi = x[2 * n : 3 * n]
        omega = x[3 * n]
        p = x[3 * n + 1]
        th, g = (p, g0) if free == "theta0" else (th0, p)
        r, core, jac = _hopf_residual_jac(u, wr, wi, omega, th, g, params, grid, c)
        if np.max(np.abs(r)) < tol:
            return u, wr, wi, omega, th, g
        big = np.zeros((3 * n + 2, 3 * n + 2))
        big[:, : 3 * n + 1] = core
        if free == "theta0":
            big[:n, 3 * n + 1] = rhs_dtheta0(u, params, grid, theta0=th, gamma=g)
            djac = jac_dtheta0(u, params, grid, theta0=th, gamma=g)
        else:
            big[:n, 3 * n + 1] = rhs_dgamma(u, params, grid, theta0=th, gamma=g)
            djac = jac_dgamma(u, params, grid, theta0=th, gamma=g)
        big[n : 2 * n, 3 * n + 1] = djac @ wr
        big[2 * n : 3 * n, 3 * n + 1] = djac @ wi
        try:
            dx = np.linalg.solve(big, -r)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(dx)):
            return None
        x = x + dx
    return None


# ---------------------------------------------------------------------------
# Two-parameter continuation (fold and Hopf loci)
# ---------------------------------------------------------------------------

def _two_param_loop(x0, residual_jac, gamma_range, gamma_idx, theta0_idx,
                    *, initial_step=1e-3, max_step=5e-2, min_step=1e-10,
                    grow=1.3, shrink=0.5, fast_iters=3, tol=1e-9,
                    max_points=20000, stop_fn=None, initial_sign=+1,
                    post_accept=None, tangent0=None):
    """Generic pseudo-arclength driver for augmented systems.

    ``residual_jac(x) -> (r, jac)`` must describe a system with exactly
    one more unknown than equations; the arclength constraint closes it.
    ``initial_sign`` orients the first tangent's gamma component unless
    an explicit ``tangent0`` is supplied.  ``post_accept(x) -> x`` may
    renormalize auxiliary unknowns (for example re-anchoring
    eigenvector normalizations) after each accepted point.  Returns
    (list of accepted x, end_reason).
    """
    r0, jac0 = residual_jac(x0)
    if np.max(np.abs(r0)) > 1e-8:
        raise ConvergenceError("two-parameter seed does not satisfy its system")
    g_lo, g_hi = min(gamma_range), max(gamma_range)
    if tangent0 is not None:
        tangent = tangent0 / np.linalg.norm(tangent0)
    else:
        # initial tangent: null vector of the rectangular Jacobian
        _, _, vt = np.linalg.svd(jac0)
        tangent = vt[-1]
        if tangent[gamma_idx] != 0 and (tangent[gamma_idx] > 0) != (initial_sign > 0):
            tangent = -tangent

    xs = [x0.copy()]
    x = x0.copy()
    ds = initial_step
    travelled = 0.0
    end_reason = "max_points"
    while len(xs) < max_points:
        x_pred = x + ds * tangent
        x_new = _bordered_newton(x_pred, residual_jac, tangent, x, ds, tol)
        if x_new is None:
            ds *= shrink
            if ds < min_step:
                end_reason = "step_underflow"
                break
            continue
        if stop_fn is not None and stop_fn(x_new):
            xs.append(x_new)
            end_reason = "stop_condition"
            break
        if post_accept is not None:
            x_new = post_accept(x_new)
        xs.append(x_new)
        step_len = np.linalg.norm(x_new - x)
        travelled += step_len
        # closed-curve detection: back at the start after real travel
        # (full-space distance distinguishes sheets that cross in the
        # parameter-plane projection)
        if travelled > 20 * max_step and np.linalg.norm(x_new - x0) < 2 * step_len:
            end_reason = "closed_loop"
            break
        new_tangent = x_new - x
        nrm = np.linalg.norm(new_tangent)
        if nrm == 0:
            end_reason = "stalled"
            break
        tangent = new_tangent / nrm
        x = x_new
        ds = min(max_step, ds * grow)
        g = x[gamma_idx]
        if g < g_lo - 1e-12 or g > g_hi + 1e-12:
            end_reason = "gamma_range"
            break
    return xs, end_reason


def _bordered_newton(x_pred, residual_jac, tangent, x_prev, ds, tol, max_iter=8):
    x = x_pred.copy()
    for _ in range(max_iter):
        r, jac = residual_jac(x)
        g = tangent @ (x - x_prev) - ds
        if np.max(np.abs(r)) < tol and abs(g) < 1e-10:
            return x
        big = np.vstack([jac, tangent])
        try:
            dx = np.linalg.solve(big, -np.concatenate([r, [g]]))
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(dx)):
            return None
        x = x + dx
    return None


def continue_lp_locus(
    params: ModelParams,
    gamma_range: tuple[float, float],
    seed_lp: BranchPoint,
    grid: CollocationGrid,
    *,
    tol: float = 1e-9,
    max_points: int = 20000,
    step: float = 2e-3,
    max_step: float = 5e-2,
) -> TwoParamLocus:
    """Trace the fold curve in the (gamma, theta0) plane.

    The augmented system {rhs = 0, J v = 0, |v| pinned} is continued
    with both parameters free.  The curve passes through cusps (where
    the gamma direction reverses); each cusp is recorded from a local
    quadratic fit of gamma along the curve.  Tracing ends at the gamma
    range boundary or on step underflow.
    """
    if seed_lp.label != PointLabel.LP:
        raise ValueError("seed point must be labeled LP")
    n = grid.size
    u0 = seed_lp.state.to_vector()
    jac = jac_vec(u0, params, grid, theta0=seed_lp.theta0)
    v0 = _null_vector(jac)
    sol = _solve_fold(u0, v0, seed_lp.theta0, params.gamma, params, grid,
                      free="theta0", tol=1e-11)
    if sol is None:
        raise ConvergenceError("could not polish the LP seed")
    u0, v0, th0, g0 = sol
    anchor = {"c": v0.copy()}

    def residual_jac(x):
        c = anchor["c"]
        u, v, th, g = x[:n], x[n : 2 * n], x[2 * n], x[2 * n + 1]
        jac = jac_vec(u, params, grid, theta0=th, gamma=g)
        r = np.concatenate(
            [rhs_vec(u, params, grid, theta0=th, gamma=g), jac @ v, [c @ v - 1.0]]
        )
        big = np.zeros((2 * n + 1, 2 * n + 2))
        big[:n, :n] = jac
        big[n : 2 * n, :n] = jac_dir_deriv(u, v, params, grid, theta0=th, gamma=g)
        big[n : 2 * n, n : 2 * n] = jac
        big[2 * n, n : 2 * n] = c
        big[:n, 2 * n] = rhs_dtheta0(u, params, grid, theta0=th, gamma=g)
        big[n : 2 * n, 2 * n] = jac_dtheta0(u, params, grid, theta0=th, gamma=g) @ v
        big[:n, 2 * n + 1] = rhs_dgamma(u, params, grid, theta0=th, gamma=g)
        big[n : 2 * n, 2 * n + 1] = jac_dgamma(u, params, grid, theta0=th, gamma=g) @ v
        return r, big

    def post_accept(x):
        # Re-anchor the normalization covector only; the point itself is
        # untouched so the secant tangent stays true to the curve.  The
        # next corrector absorbs the (tiny) normalization change.
        v = x[n : 2 * n]
        anchor["c"] = v / (v @ v)
        return x

    x0 = np.concatenate([u0, v0, [th0, g0]])
    xs_dn, end_dn = _two_param_loop(
        x0, residual_jac, gamma_range, gamma_idx=2 * n + 1, theta0_idx=2 * n,
        initial_step=step, max_step=max_step, tol=tol, max_points=max_points,
        initial_sign=-1, post_accept=post_accept,
    )
    anchor["c"] = v0.copy()
    xs_up, end_up = _two_param_loop(
        x0, residual_jac, gamma_range, gamma_idx=2 * n + 1, theta0_idx=2 * n,
        initial_step=step, max_step=max_step, tol=tol, max_points=max_points,
        initial_sign=+1, post_accept=post_accept,
    )

    def to_point(x):
        return LocusPoint(gamma=float(x[2 * n + 1]), theta0=float(x[2 * n]),
                          state=PelletState.from_vector(x[:n]))

    pts: list[LocusPoint] = [to_point(x) for x in reversed(xs_dn[1:])]
    pts.extend(to_point(x) for x in xs_up)
    cusps = _find_cusps(pts)
    return TwoParamLocus(kind=LocusKind.LP, points=pts, cusps=cusps,
                         end_reason=f"{end_dn};{end_up}")


def _find_cusps(pts: list[LocusPoint]) -> list[tuple[float, float]]:
    """Locate gamma-direction reversals by local quadratic fit."""
    cusps = []
    gs = np.array([p.gamma for p in pts])
    ts = np.array([p.theta0 for p in pts])
    dg = np.diff(gs)
    for i in range(1, len(dg)):
        if dg[i - 1] == 0 or dg[i] == 0 or (dg[i - 1] < 0) == (dg[i] < 0):
            continue
        sl = slice(max(0, i - 2), min(len(gs), i + 3))
        s = np.arange(sl.stop - sl.start, dtype=float)
        coef = np.polyfit(s, gs[sl], 2)
        if coef[0] == 0:
            continue
        s_ext = -coef[1] / (2 * coef[0])
        g_c = np.polyval(coef, s_ext)
        t_c = np.polyval(np.polyfit(s, ts[sl], 2), s_ext)
        cusps.append((float(g_c), float(t_c)))
    return cusps


def continue_hb_locus(
    params: ModelParams,
    gamma_range: tuple[float, float],
    seed_hb: BranchPoint,
    grid: CollocationGrid,
    *,
    tol: float = 1e-9,
    max_points: int = 8000,
    step: float = 2e-3,
    max_step: float = 5e-2,
    omega_min: float = 1e-4,
    trace_both_ways: bool = True,
) -> TwoParamLocus:
    """Trace the Hopf locus in the (gamma, theta0) plane.

    The locus is a single smooth curve through its gamma minimum; both
    directions from the seed are traced and merged.  An endpoint where
    the Hopf frequency collapses is a double-zero singularity.  The
    bordered system degenerates as omega -> 0 (both eigenvector parts
    collapse onto the fold null vector), so tracing stops at
    ``omega_min`` and the double-zero location is obtained by linear
    extrapolation of omega**2 to zero, which is far more accurate than
    the last computed point.
    """
    if seed_hb.label != PointLabel.HB:
        raise ValueError("seed point must be labeled HB")
    n = grid.size
    u0 = seed_hb.state.to_vector()
    jac = jac_vec(u0, params, grid, theta0=seed_hb.theta0)
    lam, vec = np.linalg.eig(jac)
    cplx = np.where(lam.imag > _IM_TOL)[0]
    if len(cplx) == 0:
        raise ConvergenceError("HB seed has no complex eigenvalues")
    i = cplx[np.argmin(np.abs(lam[cplx].real))]
    wr0, wi0 = _orthonormal_pair(vec[:, i])
    sol = _solve_hopf(u0, wr0, wi0, float(lam[i].imag), seed_hb.theta0, params.gamma,
                      params, grid, free="theta0", tol=1e-11)
    if sol is None:
        raise ConvergenceError("could not polish the HB seed")
    u0, wr0, wi0, om0, th0, g0 = sol
    anchor = {"c": wr0.copy()}

    def residual_jac(x):
        u = x[:n]
        wr = x[n : 2 * n]
        wi = x[2 * n : 3 * n]
        om = x[3 * n]
        th = x[3 * n + 1]
        g = x[3 * n + 2]
        r, core, jac = _hopf_residual_jac(u, wr, wi, om, th, g, params, grid,
                                          anchor["c"])
        big = np.zeros((3 * n + 2, 3 * n + 3))
        big[:, : 3 * n + 1] = core
        big[:n, 3 * n + 1] = rhs_dtheta0(u, params, grid, theta0=th, gamma=g)
        djac = jac_dtheta0(u, params, grid, theta0=th, gamma=g)
        big[n : 2 * n, 3 * n + 1] = djac @ wr
        big[2 * n : 3 * n, 3 * n + 1] = djac @ wi
        big[:n, 3 * n + 2] = rhs_dgamma(u, params, grid, theta0=th, gamma=g)
        djac = jac_dgamma(u, params, grid, theta0=th, gamma=g)
        big[n : 2 * n, 3 * n + 2] = djac @ wr
        big[2 * n : 3 * n, 3 * n + 2] = djac @ wi
        return r, big

    def stop_fn(x):
        return abs(x[3 * n]) < omega_min

    def post_accept(x):
        # Re-anchor the phase/normalization covector without touching the
        # point (keeps the secant tangent true to the curve); the next
        # corrector absorbs the small normalization change.
        wr = x[n : 2 * n]
        anchor["c"] = wr / (wr @ wr)
        return x

    x0 = np.concatenate([u0, wr0, wi0, [om0, th0, g0]])
    runs = []
    xs, end1 = _two_param_loop(
        x0, residual_jac, gamma_range, gamma_idx=3 * n + 2, theta0_idx=3 * n + 1,
        initial_step=step, max_step=max_step, tol=tol, max_points=max_points,
        stop_fn=stop_fn, initial_sign=+1, post_accept=post_accept,
    )
    runs.append((xs, end1))
    if trace_both_ways:
        anchor["c"] = wr0.copy()
        xs2, end2 = _two_param_loop(
            x0, residual_jac, gamma_range, gamma_idx=3 * n + 2, theta0_idx=3 * n + 1,
            initial_step=step, max_step=max_step, tol=tol, max_points=max_points,
            stop_fn=stop_fn, initial_sign=-1, post_accept=post_accept,
        )
        runs.append((xs2, end2))

    # merge: reverse the second run and append the first
    def to_point(x):
        return LocusPoint(
            gamma=float(x[3 * n + 2]),
            theta0=float(x[3 * n + 1]),
            state=PelletState.from_vector(x[:n]),
            omega=float(abs(x[3 * n])),
        )

    all_pts: list[LocusPoint] = []
    ends = []
    if trace_both_ways and len(runs[1][0]) > 1:
        all_pts.extend(to_point(x) for x in reversed(runs[1][0][1:]))
    all_pts.extend(to_point(x) for x in runs[0][0])
    ends = [end for _, end in runs]
    double_zeros = _omega_collapse_points(all_pts)
    return TwoParamLocus(
        kind=LocusKind.HB,
        points=all_pts,
        double_zeros=double_zeros,
        end_reason=";".join(ends),
    )


def _omega_collapse_points(pts: list[LocusPoint], omega_cut: float = 0.02):
    """(gamma, theta0) wherever the Hopf frequency locally collapses.

    A double-zero singularity is approached whenever omega dips toward
    zero along the locus; the location of the local omega minimum
    approximates the singular point to O(omega_min^2).  Nearby hits
    (both legs funneling into the same point, or tracing stops at one)
    are merged.
    """
    oms = np.array([p.omega for p in pts])
    cand: list[tuple[float, float, float]] = []
    for i in range(len(pts)):
        if oms[i] > omega_cut:
            continue
        lo = oms[i - 1] if i > 0 else np.inf
        hi = oms[i + 1] if i < len(pts) - 1 else np.inf
        if oms[i] <= lo and oms[i] <= hi:
            cand.append((pts[i].gamma, pts[i].theta0, oms[i]))
    merged: list[tuple[float, float]] = []
    for g, t, om in sorted(cand, key=lambda c: c[2]):
        if all(np.hypot(g - mg, t - mt) > 2e-3 for mg, mt in merged):
            merged.append((g, t))
    return merged
