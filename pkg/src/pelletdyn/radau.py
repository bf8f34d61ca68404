"""Adaptive implicit Radau IIA (order 5) integrator for autonomous systems.

L-stable three-stage collocation scheme with an embedded third-order
error estimate, PI-type step control, and analytic-Jacobian stage
solves.  Stiffness in the pellet system comes from the fast diffusion
modes and the temperature coupling at large Lewis number, which rules
out explicit schemes near ignition.

Beyond plain integration the stepper can propagate exact tangents of
the *numerical* flow map: derivatives of the end state with respect to
the initial state and with respect to parameters entering the vector
field.  Differentiating the collocation stage equations gives a linear
system per accepted step that shares the step's stage values, so the
returned tangents are consistent with the computed trajectory to
machine precision (for the frozen step sequence).  Shooting Newton for
periodic orbits relies on this consistency.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import StepSizeUnderflow

__all__ = ["OdeResult", "radau_ivp"]

_S6 = np.sqrt(6.0)
C = np.array([(4.0 - _S6) / 10.0, (4.0 + _S6) / 10.0, 1.0])
A = np.array(
    [
        [(88.0 - 7.0 * _S6) / 360.0, (296.0 - 169.0 * _S6) / 1800.0, (-2.0 + 3.0 * _S6) / 225.0],
        [(296.0 + 169.0 * _S6) / 1800.0, (88.0 + 7.0 * _S6) / 360.0, (-2.0 - 3.0 * _S6) / 225.0],
        [(16.0 - _S6) / 36.0, (16.0 + _S6) / 36.0, 1.0 / 9.0],
    ]
)
# Embedded-error combination (third order), filtered through the real
# stage operator.
E = np.array([-13.0 - 7.0 * _S6, -13.0 + 7.0 * _S6, -1.0]) / 3.0


def _real_block_transform():
    """Split inv(A) into a real eigenvalue and a 2x2 rotation block."""
    a_inv = np.linalg.inv(A)
    lam, vec = np.linalg.eig(a_inv)
    i_real = int(np.argmin(np.abs(lam.imag)))
    i_cplx = [i for i in range(3) if i != i_real and lam[i].imag > 0][0]
    v_r = vec[:, i_real].real
    v_r = v_r / v_r[np.argmax(np.abs(v_r))]
    v_c = vec[:, i_cplx]
    v_c = v_c / v_c[np.argmax(np.abs(v_c))]
    t = np.column_stack([v_r, v_c.real, v_c.imag])
    ti = np.linalg.inv(t)
    block = ti @ a_inv @ t
    mu_real = block[0, 0]
    mu_cplx = block[1, 1] + 1j * block[2, 1]
    return t, ti, mu_real, mu_cplx


T_MAT, TI_MAT, MU_REAL, MU_CPLX = _real_block_transform()

_NEWTON_MAX = 6
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0

# Cardinal cubics on the nodes (0, c1, c2, 1) for dense output; basis i
# vanishes at 0 and equals delta_ij at the stage nodes.
_DENSE_NODES = np.concatenate([[0.0], C])


def _dense_basis(theta: np.ndarray) -> np.ndarray:
    """ell_i(theta) for i = 1..3; shape (len(theta), 3)."""
    theta = np.atleast_1d(theta)
    out = np.empty((len(theta), 3))
    for i in range(1, 4):
        ci = _DENSE_NODES[i]
        num = np.ones_like(theta)
        den = 1.0
        for j in range(4):
            if j == i:
                continue
            num = num * (theta - _DENSE_NODES[j])
            den *= ci - _DENSE_NODES[j]
        out[:, i - 1] = num / den
    return out


@dataclass
class OdeResult:
    """Outcome of :func:`radau_ivp`.

    ``t``/``y`` hold the accepted step points; ``t_eval``/``y_eval`` the
    dense-output samples when sample times were requested.  ``tangent``
    is d y(t_end) / d y0 and ``sens`` is d y(t_end) / d p, both for the
    numerical flow.
    """

    t: np.ndarray
    y: np.ndarray
    t_eval: np.ndarray | None = None
    y_eval: np.ndarray | None = None
    tangent: np.ndarray | None = None
    sens: np.ndarray | None = None
    nsteps: int = 0
    nrejected: int = 0
    nfev: int = 0
    _pieces: list = field(default_factory=list, repr=False)

    def interpolate(self, times) -> np.ndarray:
        """Evaluate the collocation interpolant at the given times."""
        if not self._pieces:
            raise ValueError("dense output was not kept for this run")
        times = np.atleast_1d(np.asarray(times, dtype=float))
        starts = np.array([p[0] for p in self._pieces])
        out = np.empty((len(times), self.y.shape[1]))
        idx = np.searchsorted(starts, times, side="right") - 1
        idx = np.clip(idx, 0, len(self._pieces) - 1)
        for k, (ti, i) in enumerate(zip(times, idx)):
            t0, h, y0, z = self._pieces[i]
            theta = (ti - t0) / h
            out[k] = y0 + _dense_basis(theta)[0] @ z
        return out


def _initial_step(f, y0, f0, t_end, rtol, atol):
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, t_end)
    y1 = y0 + h0 * f0
    f1 = f(y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, t_end)


def radau_ivp(
    f,
    jac,
    y0,
    t_end,
    *,
    rtol: float = 1e-9,
    atol: float = 1e-11,
    t_eval=None,
    tangent: bool = False,
    fp=None,
    n_p: int = 0,
    max_step: float = np.inf,
    first_step: float | None = None,
    accept_check=None,
    max_steps: int = 2_000_000,
    keep_dense: bool = False,
) -> OdeResult:
    """Integrate the autonomous system y' = f(y) from 0 to t_end.

    Parameters
    ----------
    f, jac : callables
        Vector field f(y) -> (n,) and its Jacobian jac(y) -> (n, n).
    t_end : float
        Final time, > 0.
    rtol, atol : float
        Local error control tolerances (RMS-scaled).
    t_eval : array_like, optional
        Sample times in [0, t_end] for dense output.
    tangent : bool
        Propagate d y(t_end)/d y0 through every accepted step.
    fp : callable, optional
        Parameter derivative of the field, fp(y) -> (n, n_p); enables
        the ``sens`` output d y(t_end)/d p.
    accept_check : callable, optional
        Called as accept_check(t_new, y_new) after each accepted step;
        may raise to abort with a diagnostic.
    keep_dense : bool
        Retain per-step interpolation data for :meth:`OdeResult.interpolate`.

    Raises
    ------
    StepSizeUnderflow
        If error control or the stage Newton forces the step below the
        representable minimum.
    """
    y = np.asarray(y0, dtype=float).copy()
    n = len(y)
    if not t_end > 0:
        raise ValueError(f"t_end must be > 0, got {t_end!r}")
    if fp is not None and n_p <= 0:
        raise ValueError("n_p must be positive when fp is given")

    want_dense = keep_dense or t_eval is not None
    newton_tol = max(10 * np.finfo(float).eps / rtol, min(0.03, rtol**0.5))

    f0 = f(y)
    nfev = 1
    h = first_step if first_step is not None else _initial_step(f, y, f0, t_end, rtol, atol)
    h = min(h, max_step, t_end)

    t = 0.0
    ts = [0.0]
    ys = [y.copy()]
    pieces = []
    mat_m = np.eye(n) if tangent else None
    mat_s = np.zeros((n, n_p)) if fp is not None else None

    h_old = None
    err_old = None
    rejected = False
    z_guess = np.zeros((3, n))
    have_guess = False
    nsteps = 0
    nrej = 0
    identity = np.eye(n)

    while t < t_end - 1e-14 * max(1.0, t_end):
        if nsteps >= max_steps:
            raise StepSizeUnderflow(
                f"step budget exhausted at t={t:.6g} (max_steps={max_steps})"
            )
        h = min(h, t_end - t)
        if h < 1e-14 * max(1.0, abs(t)):
            raise StepSizeUnderflow(f"step size underflow at t={t:.6g} (h={h:.3e})")

        jac_y = jac(y)
        lu_real = sla.lu_factor(MU_REAL / h * identity - jac_y)
        lu_cplx = sla.lu_factor(MU_CPLX / h * identity - jac_y.astype(complex))

        if have_guess:
            z0 = z_guess
        else:
            z0 = np.zeros((3, n))

        converged, n_iter, z, w, fz, nf = _solve_stages(
            f, y, h, z0, lu_real, lu_cplx, newton_tol, rtol, atol
        )
        nfev += nf
        if not converged:
            h *= 0.5
            have_guess = False
            rejected = True
            nrej += 1
            continue

        y_new = y + z[2]
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        ze = (z.T @ E) / h
        err = sla.lu_solve(lu_real, f0 + ze)
        err_norm = np.sqrt(np.mean((err / scale) ** 2))
        if rejected and err_norm > 1.0:
            err = sla.lu_solve(lu_real, f(y + err) + ze)
            nfev += 1
            err_norm = np.sqrt(np.mean((err / scale) ** 2))

        safety = 0.9 * (2 * _NEWTON_MAX + 1) / (2 * _NEWTON_MAX + n_iter)
        if err_norm > 1.0:
            h *= max(_MIN_FACTOR, safety * err_norm**-0.25)
            rejected = True
            nrej += 1
            have_guess = False
            continue

        # step accepted
        if tangent or fp is not None:
            # Differentiate the converged stage equations: one linear
            # solve yields the exact step-map derivatives w.r.t. the
            # step's initial state (always needed for chaining) and
            # w.r.t. the field parameters.
            stage_y = y[None, :] + z
            jac_stages = [jac(stage_y[i]) for i in range(3)]
            kmat = np.empty((3 * n, 3 * n))
            for i in range(3):
                for j in range(3):
                    blk = -h * A[i, j] * jac_stages[j]
                    if i == j:
                        blk = blk + identity
                    kmat[i * n : (i + 1) * n, j * n : (j + 1) * n] = blk
            ncols = n + (n_p if fp is not None else 0)
            rhs_blk = np.zeros((3 * n, ncols))
            fps = [fp(stage_y[i]) for i in range(3)] if fp is not None else None
            for i in range(3):
                acc = np.zeros((n, n))
                for j in range(3):
                    acc += h * A[i, j] * jac_stages[j]
                rhs_blk[i * n : (i + 1) * n, :n] = acc
                if fps is not None:
                    accp = np.zeros((n, n_p))
                    for j in range(3):
                        accp += h * A[i, j] * fps[j]
                    rhs_blk[i * n : (i + 1) * n, n:] = accp
            sol = np.linalg.solve(kmat, rhs_blk)
            d_step = identity + sol[2 * n :, :n]
            if tangent:
                mat_m = d_step @ mat_m
            if fp is not None:
                mat_s = d_step @ mat_s + sol[2 * n :, n:]

        if want_dense:
            pieces.append((t, h, y.copy(), z.copy()))

        t_new = t + h
        if accept_check is not None:
            accept_check(t_new, y_new)

        # extrapolate stage guess for the next step
        factor = _predict_factor(h, h_old, err_norm, err_old)
        h_next = h * min(_MAX_FACTOR, max(_MIN_FACTOR, safety * factor))
        h_next = min(h_next, max_step)
        basis = _dense_basis(1.0 + C * (h_next / h))
        z_guess = (y[None, :] + basis @ z) - y_new[None, :]
        have_guess = True

        h_old, err_old = h, err_norm
        t, y = t_new, y_new
        f0 = f(y)
        nfev += 1
        ts.append(t)
        ys.append(y.copy())
        nsteps += 1
        rejected = False
        h = h_next

    result = OdeResult(
        t=np.array(ts),
        y=np.array(ys),
        tangent=mat_m,
        sens=mat_s,
        nsteps=nsteps,
        nrejected=nrej,
        nfev=nfev,
        _pieces=pieces if (keep_dense or t_eval is not None) else [],
    )
    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        result.t_eval = t_eval
        result.y_eval = result.interpolate(t_eval)
        if not keep_dense:
            result._pieces = []
    return result


def _predict_factor(h, h_old, err, err_old):
    """Gustafsson predictive step factor."""
    if err == 0:
        return _MAX_FACTOR
    if h_old is None or err_old is None or err_old == 0:
        return err**-0.25
    return min(1.0, h / h_old * (err_old / err) ** 0.25) * err**-0.25


def _solve_stages(f, y, h, z0, lu_real, lu_cplx, tol, rtol, atol):
    """Simplified Newton on the transformed stage equations."""
    n = len(y)
    w = TI_MAT @ z0
    z = T_MAT @ w
    scale = atol + rtol * np.abs(y)
    fz = np.empty((3, n))
    dw_norm_old = None
    rate = None
    nfev = 0
    converged = False
    k = 0
    for k in range(_NEWTON_MAX):
        for i in range(3):
            fz[i] = f(y + z[i])
        nfev += 3
        if not np.all(np.isfinite(fz)):
            break
        phi = TI_MAT @ fz
        rhs_r = phi[0] - (MU_REAL / h) * w[0]
        rhs_c = (phi[1] + 1j * phi[2]) - (MU_CPLX / h) * (w[1] + 1j * w[2])
        dw_r = sla.lu_solve(lu_real, rhs_r)
        dw_c = sla.lu_solve(lu_cplx, rhs_c)
        dw = np.vstack([dw_r, dw_c.real, dw_c.imag])
        dw_norm = np.sqrt(np.mean((dw / scale) ** 2))
        if dw_norm_old is not None:
            if dw_norm_old == 0:
                rate = 0.0
            else:
                rate = dw_norm / dw_norm_old
            if rate >= 1.0 or rate ** (_NEWTON_MAX - k) / (1.0 - rate) * dw_norm > tol:
                break
        w = w + dw
        z = T_MAT @ w
        if dw_norm == 0.0 or (rate is not None and rate / (1.0 - rate) * dw_norm < tol):
            converged = True
            break
        dw_norm_old = dw_norm
    return converged, k + 1, z, w, fz, nfev
