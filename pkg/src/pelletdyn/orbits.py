"""Periodic orbits by multiple shooting: Hopf starts, pseudo-arclength
cycle continuation, Floquet stability, homoclinic detection by period
blow-up, and two-parameter continuation of the homoclinic locus.

The cycle is split into segments integrated on a unit pseudo-time with
the segment duration folded into the vector field, so the period enters
as an ordinary field parameter and the integrator's exact tangent
propagation covers all shooting derivatives.  Floquet multipliers come
from the eigenvalues of the block-cyclic embedding of the segment
transition matrices (the K-th roots of the monodromy spectrum), which
stays accurate for long-period orbits whose explicit monodromy product
would overflow the small multipliers' precision.

Near a homoclinic connection the period grows like
T = c - ln|theta0 - theta0*| / lambda_u with lambda_u the saddle's
unstable eigenvalue; fitting that law over the branch tail extrapolates
the connection parameter far more accurately than truncating at any
finite period.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .collocation import (
    CollocationGrid,
    PelletState,
    eta_of_vector,
    jac_vec,
    rhs_dgamma,
    rhs_dtheta0,
    rhs_vec,
)
from .continuation import (
    Branch,
    BranchPoint,
    LocusKind,
    LocusPoint,
    PointLabel,
    Stability,
    TwoParamLocus,
    _orthonormal_pair,
    _two_param_loop,
    newton_vec,
)
from .errors import ConvergenceError
from .model import ModelParams, theta_from_z
from .radau import radau_ivp

__all__ = [
    "Amplitude",
    "PeriodicOrbit",
    "CycleBranch",
    "HomoclinicPoint",
    "cycle_from_hopf",
    "continue_cycles",
    "detect_homoclinic",
    "continue_hcl_locus",
]

_TRIVIAL_TOL = 1e-6


@dataclass(frozen=True)
class Amplitude:
    theta_min: float
    theta_max: float
    eta_min: float
    eta_max: float


@dataclass
class PeriodicOrbit:
    """A converged limit cycle with Floquet data and full amplitudes."""

    theta0: float
    gamma: float
    period: float
    cycle_times: np.ndarray  # (M,) in [0, period)
    cycle_states: np.ndarray  # (M, n)
    eta: np.ndarray
    theta: np.ndarray
    floquet: np.ndarray  # complex multipliers of the period map
    amplitude: Amplitude
    stability: str  # "stable" | "unstable"
    trivial_error: float  # |multiplier closest to 1  -  1|
    segment_starts: np.ndarray = field(repr=False, default=None)
    origin: dict = field(default_factory=dict, repr=False)

    def pellet_state(self, i: int) -> PelletState:
        return PelletState.from_vector(self.cycle_states[i])


@dataclass
class CycleBranch:
    """Ordered branch of periodic orbits from a cycle continuation."""

    orbits: list[PeriodicOrbit]
    end_reason: str = ""

    def __iter__(self):
        return iter(self.orbits)

    def __len__(self):
        return len(self.orbits)

    def __getitem__(self, i):
        return self.orbits[i]


@dataclass
class HomoclinicPoint:
    """A saddle connection located by period blow-up extrapolation."""

    gamma: float
    theta0: float
    saddle: BranchPoint
    proxy_orbit: PeriodicOrbit
    orbit_kind: str  # "semistable" | "unstable"
    lambda_u: float
    fit_slope: float
    fit_intercept: float
    saddle_distance: float
    n_fit: int


# ---------------------------------------------------------------------------
# Shooting machinery
# ---------------------------------------------------------------------------

class _Shooter:
    """Multiple-shooting residuals/Jacobians for one (params, grid) pair."""

    def __init__(self, params: ModelParams, grid: CollocationGrid, n_seg: int = 8,
                 rtol: float = 1e-10, atol: float = 1e-12):
        self.params = params
        self.grid = grid
        self.n_seg = n_seg
        self.n = grid.size
        self.rtol = rtol
        self.atol = atol

    def segment(self, u0, t_seg, th0, g, *, params=("T", "theta0"), t_eval=None):
        """Flow over one segment with tangent and parameter sensitivities.

        Integrates the unit-pseudo-time field t_seg * f(u); 'T' columns
        are derivatives with respect to t_seg itself (the field is its
        own t_seg-derivative divided by t_seg).
        """
        p, grid = self.params, self.grid

        def f(u):
            return t_seg * rhs_vec(u, p, grid, theta0=th0, gamma=g)

        def jac(u):
            return t_seg * jac_vec(u, p, grid, theta0=th0, gamma=g)

        cols = []
        for name in params:
            if name == "T":
                cols.append(lambda u: rhs_vec(u, p, grid, theta0=th0, gamma=g))
            elif name == "theta0":
                cols.append(lambda u: t_seg * rhs_dtheta0(u, p, grid, theta0=th0, gamma=g))
            elif name == "gamma":
                cols.append(lambda u: t_seg * rhs_dgamma(u, p, grid, theta0=th0, gamma=g))
            else:
                raise ValueError(name)

        def fp(u):
            return np.column_stack([c(u) for c in cols])

        res = radau_ivp(
            f, jac, u0, 1.0, rtol=self.rtol, atol=self.atol,
            tangent=True, fp=fp if cols else None, n_p=len(cols),
            t_eval=t_eval, keep_dense=False,
        )
        return res

    def residual_jac(self, s_flat, t_total, th0, g, ref0, fdir,
                     free=("lnT", "theta0"), t_eval=None):
        """Shooting residual and Jacobian.

        Rows: K matching conditions then the phase condition
        fdir . (s_0 - ref0).  Columns: the K segment start states,
        then the requested free parameters in order.  Returns
        (residual, jacobian, samples) where samples holds per-segment
        dense evaluations when t_eval (per-segment pseudo-times) is
        given.
        """
        k, n = self.n_seg, self.n
        t_seg = t_total / k
        s = s_flat.reshape(k, n)
        par_names = []
        for name in free:
            par_names.append("T" if name == "lnT" else name)
        rows = k * n + 1
        cols = k * n + len(free)
        r = np.empty(rows)
        jac = np.zeros((rows, cols))
        samples = []
        for i in range(k):
            res = self.segment(s[i], t_seg, th0, g, params=tuple(par_names),
                               t_eval=t_eval)
            j_next = (i + 1) % k
            r[i * n : (i + 1) * n] = res.y[-1] - s[j_next]
            jac[i * n : (i + 1) * n, i * n : (i + 1) * n] = res.tangent
            jac[i * n : (i + 1) * n, j_next * n : (j_next + 1) * n] -= np.eye(n)
            for c_i, name in enumerate(free):
                col = res.sens[:, c_i]
                if name == "lnT":
                    # d/d lnT = t_total * d/dT_total = t_total * (1/k) d/d t_seg
                    col = col * (t_total / k)
                jac[i * n : (i + 1) * n, k * n + c_i] = col
            if t_eval is not None:
                samples.append(res.y_eval)
        r[k * n] = fdir @ (s[0] - ref0)
        jac[k * n, :n] = fdir
        return r, jac, samples


def _floquet_from_segments(phis: list[np.ndarray]) -> np.ndarray:
    """Multipliers of the cyclic product via the block-cyclic embedding."""
    k = len(phis)
    n = phis[0].shape[0]
    big = np.zeros((k * n, k * n))
    for i, phi in enumerate(phis):
        j = (i + 1) % k
        big[j * n : (j + 1) * n, i * n : (i + 1) * n] = phi
    lam = np.linalg.eigvals(big)
    mus = lam**k
    # each multiplier appears k times; cluster by sorted order
    order = np.lexsort((mus.imag, mus.real))
    mus = mus[order]
    out = np.empty(n, dtype=complex)
    for i in range(n):
        out[i] = mus[i * k : (i + 1) * k].mean()
    return out[np.argsort(-np.abs(out))]


def _classify_floquet(mus: np.ndarray):
    i_triv = int(np.argmin(np.abs(mus - 1.0)))
    trivial_error = float(np.abs(mus[i_triv] - 1.0))
    rest = np.delete(mus, i_triv)
    lead = float(np.max(np.abs(rest))) if len(rest) else 0.0
    stability = "unstable" if lead > 1.0 + _TRIVIAL_TOL else "stable"
    return stability, trivial_error


class _OrbitBuilder:
    """Turns converged shooting unknowns into PeriodicOrbit records."""

    def __init__(self, shooter: _Shooter, m_samples: int = 128):
        self.shooter = shooter
        self.m_per = max(16, int(np.ceil(m_samples / shooter.n_seg)))

    def build(self, s_flat, t_total, th0, g, origin=None) -> PeriodicOrbit:
        sh = self.shooter
        k, n = sh.n_seg, sh.n
        s = s_flat.reshape(k, n)
        t_seg = t_total / k
        sig = np.linspace(0.0, 1.0, self.m_per, endpoint=False)
        phis = []
        states = []
        times = []
        for i in range(k):
            res = sh.segment(s[i], t_seg, th0, g, params=(), t_eval=sig)
            phis.append(res.tangent)
            states.append(res.y_eval)
            times.append((i + sig) * t_seg)
        cycle = np.vstack(states)
        ctimes = np.concatenate(times)
        mus = _floquet_from_segments(phis)
        stability, trivial_error = _classify_floquet(mus)
        etas = np.array([eta_of_vector(u, sh.grid) for u in cycle])
        thetas = theta_from_z(cycle[:, -1], th0, g)
        amp = Amplitude(
            theta_min=float(thetas.min()),
            theta_max=float(thetas.max()),
            eta_min=float(etas.min()),
            eta_max=float(etas.max()),
        )
        return PeriodicOrbit(
            theta0=float(th0),
            gamma=float(g),
            period=float(t_total),
            cycle_times=ctimes,
            cycle_states=cycle,
            eta=etas,
            theta=np.asarray(thetas),
            floquet=mus,
            amplitude=amp,
            stability=stability,
            trivial_error=trivial_error,
            segment_starts=s.copy(),
            origin=origin or {},
        )


# ---------------------------------------------------------------------------
# Hopf start
# ---------------------------------------------------------------------------

def _hopf_eigdata(hb: BranchPoint, params: ModelParams, grid: CollocationGrid):
    u = hb.state.to_vector()
    jac = jac_vec(u, params, grid, theta0=hb.theta0)
    lam, vec = np.linalg.eig(jac)
    cplx = np.where(lam.imag > 1e-9)[0]
    if len(cplx) == 0:
        raise ConvergenceError("Hopf point has no complex eigenvalues")
    i = cplx[np.argmin(np.abs(lam[cplx].real))]
    omega = float(lam[i].imag)
    wr, wi = _orthonormal_pair(vec[:, i])
    return u, omega, wr, wi


def cycle_from_hopf(
    hb: BranchPoint,
    params: ModelParams,
    grid: CollocationGrid,
    epsilon: float = 1e-2,
    *,
    n_seg: int = 8,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    shoot_tol: float = 1e-9,
    max_iter: int = 20,
    m_samples: int = 128,
) -> PeriodicOrbit:
    """Converge the small limit cycle emanating from a Hopf point.

    Seeds multiple shooting with the linearized cycle
    x* + eps (cos(wt) Re w - sin(wt) Im w), frees theta0 alongside the
    period, and pins the amplitude along the eigenvector direction.
    For small eps the converged period approaches 2 pi / omega0.

    Raises
    ------
    ConvergenceError
        If the shooting Newton does not converge (epsilon too large or
        a degenerate Hopf point).
    """
    if hb.label != PointLabel.HB:
        raise ValueError("seed point must be labeled HB")
    u_hb, omega0, wr, wi = _hopf_eigdata(hb, params, grid)
    k, n = n_seg, grid.size
    t0 = 2.0 * np.pi / omega0
    phase = 2.0 * np.pi * np.arange(k) / k
    # d/dt of x* + eps*Re(w e^{i w t}) matches J x at order eps
    s = np.array([u_hb + epsilon * (np.cos(ph) * wr - np.sin(ph) * wi) for ph in phase])
    pin = wr.copy()
    pin_val = float(pin @ (s[0] - u_hb))

    shooter = _Shooter(params, grid, n_seg=n_seg, rtol=rtol, atol=atol)
    x = np.concatenate([s.ravel(), [np.log(t0)], [hb.theta0]])
    ref0 = s[0].copy()
    fdir = rhs_vec(ref0, params, grid, theta0=hb.theta0)
    nrm = np.linalg.norm(fdir)
    if nrm == 0:
        raise ConvergenceError("flow direction vanishes at the Hopf ansatz")
    fdir /= nrm

    for _ in range(max_iter):
        s_flat = x[: k * n]
        t_total = float(np.exp(x[k * n]))
        th0 = x[k * n + 1]
        r, jac, _ = shooter.residual_jac(s_flat, t_total, th0, params.gamma,
                                         ref0, fdir)
        r_full = np.concatenate([r, [pin @ (s_flat[:n] - u_hb) - pin_val]])
        if np.max(np.abs(r_full)) < shoot_tol:
            builder = _OrbitBuilder(shooter, m_samples=m_samples)
            orbit = builder.build(
                s_flat, t_total, th0, params.gamma,
                origin={
                    "hb_state": u_hb, "pin": pin, "epsilon": epsilon,
                    "omega0": omega0, "pin_val": pin_val,
                },
            )
            return orbit
        pin_row = np.zeros(len(x))
        pin_row[:n] = pin
        jac_full = np.vstack([jac, pin_row])
        try:
            dx = np.linalg.solve(jac_full, -r_full)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"Hopf-start shooting Jacobian singular: {exc}")
        if not np.all(np.isfinite(dx)):
            raise ConvergenceError("Hopf-start shooting diverged")
        x = x + dx
    raise ConvergenceError(
        f"Hopf-start shooting did not converge (epsilon={epsilon}); "
        "try a smaller amplitude"
    )


# ---------------------------------------------------------------------------
# Cycle continuation
# ---------------------------------------------------------------------------

def continue_cycles(
    seed: PeriodicOrbit,
    params: ModelParams,
    theta0_range: tuple[float, float],
    grid: CollocationGrid,
    *,
    n_seg: int = 8,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    tol: float = 1e-9,
    initial_step: float = 5e-3,
    max_step: float = 5e-2,
    t_max: float = 500.0,
    min_amplitude: float = 1e-6,
    max_points: int = 600,
    m_samples: int = 128,
) -> CycleBranch:
    """Pseudo-arclength continuation of a periodic-orbit branch.

    The continuation vector holds the segment states, ln(period) and
    theta0; using the log of the period keeps arclength steps useful
    while the period blows up near a homoclinic connection.  The branch
    halts when the period exceeds ``t_max`` (homoclinic candidate,
    reported as end_reason "period_blowup", not an error), when the
    cycle amplitude collapses (closing in on a Hopf point), when theta0
    leaves the window, or on step underflow (theta0 resolution
    exhausted near a connection, also a homoclinic candidate).
    """
    shooter = _Shooter(params, grid, n_seg=n_seg, rtol=rtol, atol=atol)
    builder = _OrbitBuilder(shooter, m_samples=m_samples)
    k, n = n_seg, grid.size
    if seed.segment_starts is None or seed.segment_starts.shape != (k, n):
        raise ValueError("seed orbit does not carry compatible segment data")

    anchor = {
        "ref0": seed.segment_starts[0].copy(),
        "fdir": None,
    }

    def _set_ref(s0, th0, g):
        fdir = rhs_vec(s0, params, grid, theta0=th0, gamma=g)
        nrm = np.linalg.norm(fdir)
        anchor["ref0"] = s0.copy()
        anchor["fdir"] = fdir / nrm if nrm > 0 else fdir

    _set_ref(seed.segment_starts[0], seed.theta0, seed.gamma)

    def residual_jac(x):
        s_flat = x[: k * n]
        t_total = float(np.exp(x[k * n]))
        th0 = x[k * n + 1]
        r, jac, _ = shooter.residual_jac(
            s_flat, t_total, th0, params.gamma, anchor["ref0"], anchor["fdir"],
            free=("lnT", "theta0"),
        )
        return r, jac

    orbits: list[PeriodicOrbit] = []

    def post_accept(x):
        s_flat = x[: k * n]
        th0 = x[k * n + 1]
        orbits.append(
            builder.build(s_flat, float(np.exp(x[k * n])), th0, params.gamma)
        )
        _set_ref(s_flat[:n], th0, params.gamma)
        return x

    def stop_fn(x):
        if x[k * n] > np.log(t_max):
            return True
        s = x[: k * n].reshape(k, n)
        if np.max(np.abs(s - s.mean(axis=0))) < min_amplitude:
            return True
        return False

    x0 = np.concatenate([seed.segment_starts.ravel(),
                         [np.log(seed.period)], [seed.theta0]])

    # initial tangent: re-solve the Hopf pin at a slightly larger amplitude
    tangent0 = None
    if seed.origin.get("pin") is not None:
        try:
            bigger = cycle_from_hopf_from_origin(seed, params, grid,
                                                 factor=1.3, shooter=shooter)
            diff = np.concatenate(
                [bigger.segment_starts.ravel() - seed.segment_starts.ravel(),
                 [np.log(bigger.period) - np.log(seed.period)],
                 [bigger.theta0 - seed.theta0]]
            )
            nd = np.linalg.norm(diff)
            if nd > 0:
                tangent0 = diff / nd
        except ConvergenceError:
            tangent0 = None

    xs, end_reason = _two_param_loop(
        x0, residual_jac, theta0_range, gamma_idx=k * n + 1, theta0_idx=k * n + 1,
        initial_step=initial_step, max_step=max_step, tol=tol,
        max_points=max_points, stop_fn=stop_fn, post_accept=post_accept,
        tangent0=tangent0,
    )
    if end_reason == "stop_condition":
        x_last = xs[-1]
        orbits.append(
            builder.build(x_last[: k * n], float(np.exp(x_last[k * n])),
                          x_last[k * n + 1], params.gamma)
        )
        if x_last[k * n] > np.log(t_max) - 1e-9:
            end_reason = "period_blowup"
        else:
            end_reason = "amplitude_collapse"
    elif end_reason == "gamma_range":
        end_reason = "theta0_range"
    return CycleBranch(orbits=orbits, end_reason=end_reason)


def cycle_from_hopf_from_origin(seed: PeriodicOrbit, params, grid, factor=1.3,
                                shooter=None) -> PeriodicOrbit:
    """Re-solve the Hopf-start system at a scaled pin amplitude."""
    org = seed.origin
    if not org:
        raise ConvergenceError("orbit has no Hopf-start origin data")
    sh = shooter or _Shooter(params, grid, n_seg=seed.segment_starts.shape[0])
    k, n = sh.n_seg, sh.n
    u_hb, pin = org["hb_state"], org["pin"]
    pin_val = org["pin_val"] * factor
    s = u_hb[None, :] + factor * (seed.segment_starts - u_hb[None, :])
    x = np.concatenate([s.ravel(), [np.log(seed.period)], [seed.theta0]])
    ref0 = s[0].copy()
    fdir = rhs_vec(ref0, params, grid, theta0=seed.theta0)
    fdir /= np.linalg.norm(fdir)
    for _ in range(20):
        s_flat = x[: k * n]
        t_total = float(np.exp(x[k * n]))
        th0 = x[k * n + 1]
        r, jac, _ = sh.residual_jac(s_flat, t_total, th0, params.gamma, ref0, fdir)
        r_full = np.concatenate([r, [pin @ (s_flat[:n] - u_hb) - pin_val]])
        if np.max(np.abs(r_full)) < 1e-9:
            builder = _OrbitBuilder(sh)
            orb = builder.build(s_flat, t_total, th0, params.gamma, origin=dict(org))
            orb.origin["pin_val"] = pin_val
            return orb
        pin_row = np.zeros(len(x))
        pin_row[:n] = pin
        try:
            dx = np.linalg.solve(np.vstack([jac, pin_row]), -r_full)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(str(exc))
        x = x + dx
    raise ConvergenceError("scaled Hopf-start did not converge")


# ---------------------------------------------------------------------------
# Homoclinic detection and locus
# ---------------------------------------------------------------------------

def _saddle_near(steady: Branch, theta0: float, params, grid) -> BranchPoint:
    saddles = [p for p in steady.points if p.stability == Stability.SADDLE]
    if not saddles:
        raise ConvergenceError("steady branch contains no saddle points")
    best = min(saddles, key=lambda p: abs(p.theta0 - theta0))
    u, ok = newton_vec(best.state.to_vector(), params, grid, theta0=theta0)
    if not ok:
        raise ConvergenceError("saddle re-solve failed at extrapolated theta0")
    from .continuation import _make_point

    return _make_point(u, theta0, params, grid)


def detect_homoclinic(
    branch: CycleBranch,
    steady: Branch,
    params: ModelParams,
    grid: CollocationGrid,
    *,
    dist_tol: float = 1e-3,
    min_tail: int = 6,
) -> HomoclinicPoint:
    """Extrapolate the parameter of the saddle connection from a branch.

    Uses the asymptotic period law T = c - ln|theta0 - theta0*|/lambda_u
    over the blow-up tail (points whose theta0 is still resolved away
    from the accumulation value), minimizing the linear-fit residual
    over theta0*.  The orbit kind follows the Floquet stability of the
    cycles just before merging: a stable cycle meeting the saddle forms
    a semistable connection, an unstable cycle an unstable one.

    Raises
    ------
    ConvergenceError
        If the branch has no blow-up tail, no saddle lies nearby, or
        the proxy orbit does not pass within ``dist_tol`` of the saddle
        in the (eta, theta) plane.
    """
    orbits = branch.orbits if isinstance(branch, CycleBranch) else list(branch)
    if len(orbits) < min_tail + 2:
        raise ConvergenceError("cycle branch too short for homoclinic detection")
    periods = np.array([o.period for o in orbits])
    # blow-up tail: walk back while the period decreases monotonically
    i_hi = len(orbits) - 1
    i_lo = i_hi
    while i_lo > 0 and periods[i_lo - 1] < periods[i_lo]:
        i_lo -= 1
    tail = orbits[i_lo : i_hi + 1]
    if len(tail) < min_tail:
        raise ConvergenceError("period blow-up tail too short for the fit")

    th_end = tail[-1].theta0
    th_prev = tail[0].theta0
    approach = np.sign(th_end - th_prev)
    if approach == 0:
        approach = 1.0
    span = max(abs(th_end - th_prev), 1e-12)

    ths = np.array([o.theta0 for o in tail])
    ts = np.array([o.period for o in tail])

    def sse(th_star):
        d = np.abs(ths - th_star)
        good = d > 1e-13
        if good.sum() < 3:
            return np.inf
        xv = -np.log(d[good])
        yv = ts[good]
        coef = np.polyfit(xv, yv, 1)
        res = yv - np.polyval(coef, xv)
        return float(res @ res)

    # golden-section over theta0* beyond the last point
    a = th_end + approach * 1e-14
    b = th_end + approach * 2.0 * span
    lo, hi = (a, b) if a < b else (b, a)
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    c1 = hi - phi * (hi - lo)
    c2 = lo + phi * (hi - lo)
    f1, f2 = sse(c1), sse(c2)
    for _ in range(200):
        if hi - lo < 1e-14 * max(1.0, abs(hi)):
            break
        if f1 <= f2:
            hi, c2, f2 = c2, c1, f1
            c1 = hi - phi * (hi - lo)
            f1 = sse(c1)
        else:
            lo, c1, f1 = c1, c2, f2
            c2 = lo + phi * (hi - lo)
            f2 = sse(c2)
    th_star = 0.5 * (lo + hi)

    d = np.abs(ths - th_star)
    good = d > 1e-13
    coef = np.polyfit(-np.log(d[good]), ts[good], 1)
    slope, intercept = float(coef[0]), float(coef[1])

    saddle = _saddle_near(steady, th_star, params, grid)
    lam_u = float(max(saddle.eigenvalues.real))

    proxy = tail[-1]
    dist = np.min(
        np.hypot(proxy.eta - saddle.eta, proxy.theta - saddle.theta)
    )
    if dist > dist_tol:
        raise ConvergenceError(
            f"proxy orbit stays {dist:.2e} away from the saddle in (eta, theta); "
            f"tolerance {dist_tol:.1e}"
        )

    kinds = [o.stability for o in tail[-3:]]
    merging_stable = kinds.count("stable") > kinds.count("unstable")
    return HomoclinicPoint(
        gamma=params.gamma,
        theta0=float(th_star),
        saddle=saddle,
        proxy_orbit=proxy,
        orbit_kind="semistable" if merging_stable else "unstable",
        lambda_u=lam_u,
        fit_slope=slope,
        fit_intercept=intercept,
        saddle_distance=float(dist),
        n_fit=int(good.sum()),
    )


def continue_hcl_locus(
    seed: HomoclinicPoint,
    params: ModelParams,
    gamma_range: tuple[float, float],
    grid: CollocationGrid,
    *,
    n_seg: int = 8,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    tol: float = 1e-8,
    initial_step: float = 2e-3,
    max_step: float = 2e-2,
    max_points: int = 2000,
    dist_tol: float = 1e-3,
) -> TwoParamLocus:
    """Trace the homoclinic locus in (gamma, theta0).

    Standard large-period approximation: the proxy orbit's period is
    held fixed while gamma and theta0 vary, which follows the true
    connection curve to O(exp(-lambda_u T)).  The trace ends at the
    gamma range, on step underflow (the locus terminating where the
    connection degenerates), or when the orbit drifts away from the
    saddle beyond ``dist_tol``.
    """
    proxy = seed.proxy_orbit
    k = proxy.segment_starts.shape[0]
    shooter = _Shooter(params, grid, n_seg=k, rtol=rtol, atol=atol)
    n = grid.size
    t_fix = proxy.period

    # rotate the cycle so the anchor sits at the fastest point (away
    # from the saddle dwell, where the phase condition is well scaled)
    speeds = [
        np.linalg.norm(rhs_vec(s, params, grid, theta0=proxy.theta0))
        for s in proxy.segment_starts
    ]
    shift = int(np.argmax(speeds))
    s0 = np.roll(proxy.segment_starts, -shift, axis=0)

    anchor = {"ref0": s0[0].copy(), "fdir": None, "gamma": seed.gamma}

    def _set_ref(svec, th0, g):
        fdir = rhs_vec(svec, params, grid, theta0=th0, gamma=g)
        anchor["ref0"] = svec.copy()
        anchor["fdir"] = fdir / np.linalg.norm(fdir)

    _set_ref(s0[0], proxy.theta0, seed.gamma)

    def residual_jac(x):
        s_flat = x[: k * n]
        th0 = x[k * n]
        g = x[k * n + 1]
        r, jac, _ = shooter.residual_jac(
            s_flat, t_fix, th0, g, anchor["ref0"], anchor["fdir"],
            free=("theta0", "gamma"),
        )
        return r, jac

    # re-anchor the seed at fixed period (theta0 free, gamma fixed)
    x = np.concatenate([s0.ravel(), [proxy.theta0]])
    for _ in range(20):
        r, jac, _ = shooter.residual_jac(
            x[: k * n], t_fix, x[k * n], seed.gamma, anchor["ref0"], anchor["fdir"],
            free=("theta0",),
        )
        if np.max(np.abs(r)) < tol:
            break
        dx = np.linalg.solve(jac, -r)
        x = x + dx
    else:
        raise ConvergenceError("could not re-anchor the homoclinic proxy orbit")

    saddle_track = {"state": seed.saddle.state.to_vector().copy()}
    locus_pts: list[LocusPoint] = []

    def post_accept(xv):
        s_flat = xv[: k * n]
        th0, g = xv[k * n], xv[k * n + 1]
        _set_ref(s_flat[:n], th0, g)
        u, ok = newton_vec(saddle_track["state"], params, grid, theta0=th0, gamma=g)
        st = None
        if ok:
            saddle_track["state"] = u
            st = PelletState.from_vector(u)
        locus_pts.append(LocusPoint(gamma=float(g), theta0=float(th0), state=st))
        return xv

    def stop_fn(xv):
        # stop when the proxy orbit no longer shadows a saddle
        s_flat = xv[: k * n]
        th0, g = xv[k * n], xv[k * n + 1]
        u, ok = newton_vec(saddle_track["state"], params, grid, theta0=th0, gamma=g)
        if not ok:
            return True
        etas = np.array([eta_of_vector(s, grid) for s in s_flat.reshape(k, n)])
        thetas = theta_from_z(s_flat.reshape(k, n)[:, -1], th0, g)
        se = eta_of_vector(u, grid)
        st = theta_from_z(u[-1], th0, g)
        return bool(np.min(np.hypot(etas - se, thetas - st)) > 10 * dist_tol)

    x0 = np.concatenate([x[: k * n], [x[k * n]], [seed.gamma]])
    xs_dn, end_dn = _two_param_loop(
        x0, residual_jac, gamma_range, gamma_idx=k * n + 1, theta0_idx=k * n,
        initial_step=initial_step, max_step=max_step, tol=tol,
        max_points=max_points, stop_fn=stop_fn, post_accept=post_accept,
        initial_sign=-1,
    )
    pts_dn = locus_pts[:]
    locus_pts.clear()
    _set_ref(x[:n], x[k * n], seed.gamma)
    saddle_track["state"] = seed.saddle.state.to_vector().copy()
    xs_up, end_up = _two_param_loop(
        x0, residual_jac, gamma_range, gamma_idx=k * n + 1, theta0_idx=k * n,
        initial_step=initial_step, max_step=max_step, tol=tol,
        max_points=max_points, stop_fn=stop_fn, post_accept=post_accept,
        initial_sign=+1,
    )
    pts_up = locus_pts[:]

    pts = list(reversed(pts_dn)) + [
        LocusPoint(gamma=seed.gamma, theta0=float(x[k * n]),
                   state=seed.saddle.state)
    ] + pts_up
    return TwoParamLocus(
        kind=LocusKind.HCL,
        points=pts,
        end_reason=f"{end_dn};{end_up}",
    )
