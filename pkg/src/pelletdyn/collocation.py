"""Orthogonal collocation of the symmetric pellet operator.

The concentration profile is even in x (zero flux at the center), so we
work in u = x**2 where the diffusion operator becomes

    (1/x^a) d/dx (x^a dy/dx)  =  4 u y'' + 2 (a+1) y'        (' = d/du)

and the center symmetry condition is structural.  Interior collocation
nodes are the roots (in u) of the polynomial orthogonal with respect to
the geometric volume weight u**((a-1)/2) on (0, 1); the surface value
y(1) = 1 is a known constant and enters the Laplacian as a fixed column
rather than an unknown.  Quadrature weights realize the volume average
integral f -> (a+1) * int_0^1 f(x) x^a dx with sum(w) = 1.

The resulting ODE system has N interior concentrations plus the lumped
pellet temperature z as its state:

    dy_i/dtau = [L (y, 1)]_i + q theta0^2 R(y_i, z)
    dz/dtau   = Le (1 - z + beta_star theta0^2 Rbar)

with Rbar the volume-averaged rate (boundary node contributes R(1, z)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridConstructionError
from .model import ModelParams, rate_partials, reaction_rate

__all__ = [
    "CollocationGrid",
    "PelletState",
    "build_grid",
    "rhs",
    "jacobian",
    "eta_average",
]

_ROOT_TOL = 1e-14


# ---------------------------------------------------------------------------
# Jacobi polynomial machinery (monic, weight (1+t)^beta on (-1, 1))
# ---------------------------------------------------------------------------

def _recurrence(k: int, beta: float):
    """Monic three-term recurrence coefficients (a_k, b_k).

    p_{k+1}(t) = (t - a_k) p_k(t) - b_k p_{k-1}(t) for the weight
    (1+t)^beta on (-1, 1).  b_0 is unused (measure normalized to 1).
    """
    if k == 0:
        return beta / (beta + 2.0), 1.0
    s = 2.0 * k + beta
    a_k = beta**2 / (s * (s + 2.0))
    b_k = 4.0 * k**2 * (k + beta) ** 2 / (s**2 * (s + 1.0) * (s - 1.0))
    return a_k, b_k


def _eval_monic(k: int, t: np.ndarray, beta: float):
    """Evaluate the monic polynomial p_k and its derivative at points t."""
    t = np.asarray(t, dtype=float)
    p_prev = np.ones_like(t)
    dp_prev = np.zeros_like(t)
    if k == 0:
        return p_prev, dp_prev
    a0, _ = _recurrence(0, beta)
    p = t - a0
    dp = np.ones_like(t)
    for j in range(1, k):
        a_j, b_j = _recurrence(j, beta)
        p, p_prev, dp, dp_prev = (
            (t - a_j) * p - b_j * p_prev,
            p,
            p + (t - a_j) * dp - b_j * dp_prev,
            dp,
        )
    return p, dp


def _jacobi_roots(n: int, beta: float) -> np.ndarray:
    """All n roots of the monic Jacobi-type polynomial p_n, increasing.

    Builds the roots level by level: the roots of p_k interlace those of
    p_{k-1}, which brackets every root for bisection; a Newton polish
    brings each to _ROOT_TOL.
    """
    roots = np.empty(0)
    for k in range(1, n + 1):
        brackets = np.concatenate([[-1.0], roots, [1.0]])
        lo = brackets[:-1].copy()
        hi = brackets[1:].copy()
        flo, _ = _eval_monic(k, lo, beta)
        for _ in range(20):  # bisect to ~1e-6 interval width
            mid = 0.5 * (lo + hi)
            fmid, _ = _eval_monic(k, mid, beta)
            left = (flo < 0) != (fmid < 0)
            hi = np.where(left, mid, hi)
            lo = np.where(left, lo, mid)
            flo = np.where(left, flo, fmid)
        t = 0.5 * (lo + hi)
        converged = False
        for _ in range(100):
            p, dp = _eval_monic(k, t, beta)
            step = p / dp
            t = t - step
            if np.max(np.abs(step)) < _ROOT_TOL:
                converged = True
                break
        if not converged:
            raise GridConstructionError(
                f"Jacobi root refinement stalled at degree {k} (beta={beta})"
            )
        roots = np.sort(t)
    return roots


def _orthonormal_rows(nodes_t: np.ndarray, degree: int, beta: float) -> np.ndarray:
    """Matrix P with P[k, i] = orthonormal p_k(t_i), k = 0..degree."""
    m = len(nodes_t)
    out = np.empty((degree + 1, m))
    norm2 = 1.0  # ||p_0||^2 under the unit-mass measure
    for k in range(degree + 1):
        p, _ = _eval_monic(k, nodes_t, beta)
        if k > 0:
            _, b_k = _recurrence(k, beta)
            norm2 *= b_k
        out[k] = p / np.sqrt(norm2)
    return out


def _barycentric_diff(nodes: np.ndarray) -> np.ndarray:
    """First-derivative matrix of Lagrange interpolation on the nodes."""
    m = len(nodes)
    lam = np.ones(m)
    for j in range(m):
        lam[j] = 1.0 / np.prod(nodes[j] - np.delete(nodes, j))
    d = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            if i != j:
                d[i, j] = (lam[j] / lam[i]) / (nodes[i] - nodes[j])
        d[i, i] = -np.sum(d[i])
    return d


# ---------------------------------------------------------------------------
# Grid and state types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CollocationGrid:
    """Immutable collocation grid for geometry factor ``a``.

    Attributes
    ----------
    a : int
        Geometry factor (matches ModelParams.a).
    n_points : int
        Number N of interior collocation points.
    nodes : ndarray, shape (N,)
        Interior points x_i in (0, 1), strictly increasing.
    laplacian : ndarray, shape (N, N+1)
        Discrete symmetric Laplacian; acts on (y_1 .. y_N, y(1)).
    weights : ndarray, shape (N+1,)
        Quadrature weights of the volume average, sum(w) = 1; the last
        weight belongs to the boundary node x = 1.
    """

    a: int
    n_points: int
    nodes: np.ndarray
    laplacian: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        """Dimension of the ODE state (N interior + temperature)."""
        return self.n_points + 1


def build_grid(a: int, n_points: int) -> CollocationGrid:
    """Construct the collocation grid for geometry ``a`` with N interior points.

    Nodes come from the roots (via u = x**2) of the polynomial
    orthogonal under the geometric volume weight; the Laplacian and the
    quadrature are exact on polynomials of the interpolation space.
    Identical (a, n_points) always produce bit-identical grids.
    """
    if a not in (0, 1, 2):
        raise ValueError(f"geometry factor a must be 0, 1 or 2, got {a!r}")
    if not 1 <= n_points <= 64:
        raise ValueError(f"n_points must be in [1, 64], got {n_points!r}")
    beta = (a - 1) / 2.0
    t_int = _jacobi_roots(n_points, beta)
    t_all = np.concatenate([t_int, [1.0]])
    u_all = 0.5 * (1.0 + t_all)
    x_int = np.sqrt(u_all[:-1])

    d1 = _barycentric_diff(u_all)
    d2 = d1 @ d1
    lap = 4.0 * u_all[:n_points, None] * d2[:n_points, :] + 2.0 * (a + 1) * d1[:n_points, :]

    p_rows = _orthonormal_rows(t_all, n_points, beta)
    e0 = np.zeros(n_points + 1)
    e0[0] = 1.0
    w = np.linalg.solve(p_rows, e0)

    for arr in (x_int, lap, w):
        arr.setflags(write=False)
    return CollocationGrid(a=a, n_points=n_points, nodes=x_int, laplacian=lap, weights=w)


@dataclass(frozen=True)
class PelletState:
    """Discretized pellet state: interior concentrations plus temperature.

    ``y`` holds the N interior nodal concentrations (the surface value
    is the constant 1 and is not stored); ``z`` is the lumped pellet
    temperature.  Concentrations must be nonnegative up to a small
    floor: converged collocation solutions on strongly ignited branches
    undershoot zero by O(1e-8) at the innermost node, which is kept
    as-is rather than clamped.
    """

    Y_FLOOR = -1e-4

    y: np.ndarray
    z: float

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", float(self.z))
        if y.ndim != 1:
            raise ValueError("y must be a 1-d array of interior concentrations")
        if np.any(y < self.Y_FLOOR):
            raise ValueError(f"negative concentration in state (min y = {y.min():.3e})")
        if not self.z > 0:
            raise ValueError(f"temperature must be > 0, got {self.z!r}")

    def to_vector(self) -> np.ndarray:
        """Pack into the flat ODE vector (y_1 .. y_N, z)."""
        return np.concatenate([self.y, [self.z]])

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "PelletState":
        vec = np.asarray(vec, dtype=float)
        return cls(y=vec[:-1].copy(), z=float(vec[-1]))


def _check_compat(n_state: int, params: ModelParams, grid: CollocationGrid) -> None:
    if grid.a != params.a:
        raise ValueError(f"grid geometry a={grid.a} does not match params.a={params.a}")
    if n_state != grid.size:
        raise ValueError(
            f"state dimension {n_state} does not match grid size {grid.size}"
        )


# ---------------------------------------------------------------------------
# Vector-form right-hand side and derivatives (hot path)
# ---------------------------------------------------------------------------

def rhs_vec(u: np.ndarray, params: ModelParams, grid: CollocationGrid,
            theta0: float | None = None, gamma: float | None = None) -> np.ndarray:
    """Time derivative of the packed state vector u = (y_1..y_N, z).

    ``theta0``/``gamma`` override the corresponding ModelParams fields;
    the override path avoids rebuilding params inside continuation
    loops.
    """
    n = grid.n_points
    th0 = params.theta0 if theta0 is None else theta0
    g = params.gamma if gamma is None else gamma
    y, z = u[:n], u[n]
    r = reaction_rate(y, z, g, params.n)
    r_b = reaction_rate(1.0, z, g, params.n)
    yext = np.concatenate([y, [1.0]])
    out = np.empty(n + 1)
    out[:n] = grid.laplacian @ yext + params.q * th0**2 * r
    rbar = grid.weights[:n] @ r + grid.weights[n] * r_b
    out[n] = params.lewis * (1.0 - z + params.beta_star * th0**2 * rbar)
    return out


def jac_vec(u: np.ndarray, params: ModelParams, grid: CollocationGrid,
            theta0: float | None = None, gamma: float | None = None) -> np.ndarray:
    """Analytic Jacobian of :func:`rhs_vec` with respect to (y, z)."""
    n = grid.n_points
    th0 = params.theta0 if theta0 is None else theta0
    g = params.gamma if gamma is None else gamma
    y, z = u[:n], u[n]
    r, ry, rz = rate_partials(y, z, g, params.n)
    _, _, rz_b = rate_partials(1.0, z, g, params.n)
    th2 = th0**2
    jac = np.zeros((n + 1, n + 1))
    jac[:n, :n] = grid.laplacian[:, :n]
    jac[np.arange(n), np.arange(n)] += params.q * th2 * ry
    jac[:n, n] = params.q * th2 * rz
    lbw = params.lewis * params.beta_star * th2
    jac[n, :n] = lbw * grid.weights[:n] * ry
    rbar_z = grid.weights[:n] @ rz + grid.weights[n] * rz_b
    jac[n, n] = params.lewis * (-1.0) + lbw * rbar_z
    return jac


def rhs_dtheta0(u, params, grid, theta0=None, gamma=None) -> np.ndarray:
    """d rhs / d theta0 at fixed state."""
    n = grid.n_points
    th0 = params.theta0 if theta0 is None else theta0
    g = params.gamma if gamma is None else gamma
    y, z = u[:n], u[n]
    r = reaction_rate(y, z, g, params.n)
    r_b = reaction_rate(1.0, z, g, params.n)
    out = np.empty(n + 1)
    out[:n] = 2.0 * params.q * th0 * r
    rbar = grid.weights[:n] @ r + grid.weights[n] * r_b
    out[n] = 2.0 * params.lewis * params.beta_star * th0 * rbar
    return out


def rhs_dgamma(u, params, grid, theta0=None, gamma=None) -> np.ndarray:
    """d rhs / d gamma at fixed state (every rate picks up (1 - 1/z))."""
    n = grid.n_points
    th0 = params.theta0 if theta0 is None else theta0
    g = params.gamma if gamma is None else gamma
    y, z = u[:n], u[n]
    fac = 1.0 - 1.0 / z
    r = reaction_rate(y, z, g, params.n)
    r_b = reaction_rate(1.0, z, g, params.n)
    out = np.empty(n + 1)
    out[:n] = params.q * th0**2 * fac * r
    rbar = grid.weights[:n] @ r + grid.weights[n] * r_b
    out[n] = params.lewis * params.beta_star * th0**2 * fac * rbar
    return out


def jac_dir_deriv(u, v, params, grid, theta0=None, gamma=None) -> np.ndarray:
    """Directional derivative of the Jacobian along a state direction v.

    Returns the matrix lim_{e->0} (J(u + e v) - J(u)) / e, needed by the
    augmented fold/Hopf systems (it equals d(J v)/du by symmetry of the
    second derivatives).
    """
    n = grid.n_points
    th0 = params.theta0 if theta0 is None else theta0
    g = params.gamma if gamma is None else gamma
    y, z = u[:n], u[n]
    vy, vz = v[:n], v[n]
    _, _, _, ryy, ryz, rzz = rate_partials(y, z, g, params.n, second=True)
    _, _, _, _, _, rzz_b = rate_partials(1.0, z, g, params.n, second=True)
    th2 = th0**2
    out = np.zeros((n + 1, n + 1))
    diag = ryy * vy + ryz * vz
    out[np.arange(n), np.arange(n)] = params.q * th2 * diag
    out[:n, n] = params.q * th2 * (ryz * vy + rzz * vz)
    lbw = params.lewis * params.beta_star * th2
    out[n, :n] = lbw * grid.weights[:n] * diag
    rbar_zz = grid.weights[:n] @ rzz + grid.weights[n] * rzz_b
    out[n, n] = lbw * (grid.weights[:n] @ (ryz * vy) + rbar_zz * vz)
    return out


def jac_dtheta0(u, params, grid, theta0=None, gamma=None) -> np.ndarray:
    """d J / d theta0: the reaction part of J scaled by 2/theta0."""
    th0 = params.theta0 if theta0 is None else theta0
    jac = jac_vec(u, params, grid, theta0=th0, gamma=gamma)
    n = grid.n_points
    out = jac.copy()
    out[:n, :n] -= grid.laplacian[:, :n]
    out[n, n] += params.lewis
    return out * (2.0 / th0)


def jac_dgamma(u, params, grid, theta0=None, gamma=None) -> np.ndarray:
    """d J / d gamma."""
    n = grid.n_points
    th0 = params.theta0 if theta0 is None else theta0
    g = params.gamma if gamma is None else gamma
    y, z = u[:n], u[n]
    r, ry, rz = rate_partials(y, z, g, params.n)
    r_b, _, rz_b = rate_partials(1.0, z, g, params.n)
    fac = 1.0 - 1.0 / z
    th2 = th0**2
    out = np.zeros((n + 1, n + 1))
    out[np.arange(n), np.arange(n)] = params.q * th2 * fac * ry
    # d/dgamma of Rz = (gamma/z^2) R:  R/z^2 + (gamma/z^2)(1 - 1/z) R
    drz = r / u[n] ** 2 + fac * rz
    out[:n, n] = params.q * th2 * drz
    lbw = params.lewis * params.beta_star * th2
    out[n, :n] = lbw * grid.weights[:n] * fac * ry
    drz_b = r_b / u[n] ** 2 + fac * rz_b
    out[n, n] = lbw * (grid.weights[:n] @ drz + grid.weights[n] * drz_b)
    return out


# ---------------------------------------------------------------------------
# Public operations on PelletState
# ---------------------------------------------------------------------------

def rhs(state: PelletState, params: ModelParams, grid: CollocationGrid):
    """State derivative (dy/dtau vector, dz/dtau scalar)."""
    _check_compat(len(state.y) + 1, params, grid)
    out = rhs_vec(state.to_vector(), params, grid)
    return out[:-1], float(out[-1])


def jacobian(state: PelletState, params: ModelParams, grid: CollocationGrid) -> np.ndarray:
    """Analytic (N+1) x (N+1) Jacobian of the ODE right-hand side."""
    _check_compat(len(state.y) + 1, params, grid)
    return jac_vec(state.to_vector(), params, grid)


def eta_average(state: PelletState, grid: CollocationGrid) -> float:
    """Volume-averaged concentration eta (boundary node contributes 1)."""
    n = grid.n_points
    if len(state.y) != n:
        raise ValueError(f"state has {len(state.y)} interior values, grid expects {n}")
    return float(grid.weights[:n] @ state.y + grid.weights[n])


def eta_of_vector(u: np.ndarray, grid: CollocationGrid) -> float:
    """Volume average straight from a packed state vector."""
    n = grid.n_points
    return float(grid.weights[:n] @ u[:n] + grid.weights[n])


def isothermal_profile(theta_eff: float, grid: CollocationGrid) -> np.ndarray:
    """Slab-shaped seed profile cosh(theta_eff x)/cosh(theta_eff) at the nodes.

    Exact steady solution for a = 0, n = 1 at effective modulus
    theta_eff; used as a Newton seed shape for all geometries.
    """
    return np.cosh(theta_eff * grid.nodes) / np.cosh(theta_eff)
