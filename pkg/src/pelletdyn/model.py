"""Dimensionless model of a porous catalyst pellet.

Single irreversible power-law reaction with Arrhenius temperature
dependence; reactant concentration is distributed over the pellet while
the pellet temperature is lumped.  Everything in this module is pure
scalar/array math with no spatial discretization (that lives in
:mod:`pelletdyn.collocation`).

State variables: y (dimensionless concentration, y = 1 at the surface)
and z (dimensionless pellet temperature, z = 1 at ambient).  The
transformed temperature ``theta = theta0 * exp((gamma/2)(1 - 1/z))``
acts as an effective Thiele modulus and is the preferred phase-plane
coordinate together with the volume-averaged concentration eta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelParams",
    "reaction_rate",
    "rate_partials",
    "theta_from_z",
    "modified_thiele",
    "q_factor",
]


def q_factor(a: int, n: float) -> float:
    """Stoichiometric consumption factor q(a, n) = -2 (a+1)^2 / (n+1).

    The single reactant is consumed (stoichiometric coefficient -1), so
    q is always finite and negative for a in {0, 1, 2} and n >= 0.
    """
    if a not in (0, 1, 2):
        raise ValueError(f"geometry factor a must be 0, 1 or 2, got {a!r}")
    if n < 0:
        raise ValueError(f"reaction order n must be >= 0, got {n!r}")
    return -2.0 * (a + 1) ** 2 / (n + 1.0)


def modified_thiele(phi0: float, a: int, n: float) -> float:
    """Modified Thiele modulus: phi0/(a+1) * sqrt((n+1)/2).

    Maps the raw Thiele modulus phi0 of a power-law reaction to the
    geometry- and order-normalized modulus theta0 used everywhere else
    in this package.
    """
    if phi0 <= 0:
        raise ValueError(f"phi0 must be > 0, got {phi0!r}")
    if n < 0:
        raise ValueError(f"reaction order n must be >= 0, got {n!r}")
    if a not in (0, 1, 2):
        raise ValueError(f"geometry factor a must be 0, 1 or 2, got {a!r}")
    return phi0 / (a + 1) * math.sqrt((n + 1.0) / 2.0)


@dataclass(frozen=True)
class ModelParams:
    """Dimensionless parameter set of the pellet model.

    Attributes
    ----------
    a : int
        Geometry factor: 0 slab, 1 cylinder, 2 sphere.
    n : float
        Reaction order, n >= 0 (non-integer orders allowed).
    beta_star : float
        Modified heat-of-reaction (Prater-type) group, > 0.
    gamma : float
        Dimensionless activation energy, >= 0.
    lewis : float
        Modified Lewis number, > 0.  Scales only the temperature
        equation's time derivative, so steady states are independent
        of it.
    theta0 : float
        Modified Thiele modulus, > 0.  The principal bifurcation
        parameter.
    """

    a: int
    n: float
    beta_star: float
    gamma: float
    lewis: float
    theta0: float

    def __post_init__(self):
        if self.a not in (0, 1, 2):
            raise ValueError(f"geometry factor a must be 0, 1 or 2, got {self.a!r}")
        if not self.n >= 0:
            raise ValueError(f"reaction order n must be >= 0, got {self.n!r}")
        if not self.beta_star > 0:
            raise ValueError(f"beta_star must be > 0, got {self.beta_star!r}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma!r}")
        if not self.lewis > 0:
            raise ValueError(f"lewis must be > 0, got {self.lewis!r}")
        if not self.theta0 > 0:
            raise ValueError(f"theta0 must be > 0, got {self.theta0!r}")

    @property
    def q(self) -> float:
        """Consumption factor q(a, n); see :func:`q_factor`."""
        return q_factor(self.a, self.n)


def _check_rate_domain(y, z, n: float) -> None:
    if np.any(np.asarray(z) <= 0):
        raise ValueError(f"temperature z must be > 0, got {z!r}")
    if np.any(np.asarray(y) < 0) and not float(n).is_integer():
        raise ValueError(
            f"negative concentration y with non-integer order n={n!r}; "
            "negative y indicates solver failure"
        )


def reaction_rate(y, z, gamma: float, n: float):
    """Dimensionless reaction rate exp(gamma (1 - 1/z)) * y**n.

    Normalized so the rate is exactly 1 at surface conditions
    (y = 1, z = 1) for any gamma and n.  Accepts scalar or array y;
    z is the (scalar) lumped pellet temperature.

    Raises
    ------
    ValueError
        If z <= 0, or y < 0 with a non-integer order n.
    """
    _check_rate_domain(y, z, n)
    y = np.asarray(y, dtype=float)
    k = np.exp(gamma * (1.0 - 1.0 / z))
    if n == 0:
        out = k * np.ones_like(y)
    else:
        out = k * y**n
    return out if out.ndim else float(out)


def rate_partials(y, z, gamma: float, n: float, second: bool = False):
    """Reaction rate and its partial derivatives at (y, z).

    Returns (R, Ry, Rz) or, with ``second=True``,
    (R, Ry, Rz, Ryy, Ryz, Rzz).  Used by the collocation Jacobian and
    the augmented bifurcation systems; all outputs broadcast with y.
    """
    _check_rate_domain(y, z, n)
    y = np.asarray(y, dtype=float)
    k = math.exp(gamma * (1.0 - 1.0 / z))
    r = k * np.ones_like(y) if n == 0 else k * y**n
    ry = np.zeros_like(y) if n == 0 else n * k * y ** (n - 1.0)
    gz2 = gamma / z**2
    rz = gz2 * r
    if not second:
        return r, ry, rz
    if n == 0 or n == 1:
        ryy = np.zeros_like(y)
    else:
        ryy = n * (n - 1.0) * k * y ** (n - 2.0)
    ryz = gz2 * ry
    rzz = r * (gamma**2 / z**4 - 2.0 * gamma / z**3)
    return r, ry, rz, ryy, ryz, rzz


def theta_from_z(z, theta0: float, gamma: float):
    """Transformed pellet temperature theta = theta0 exp((gamma/2)(1 - 1/z)).

    Strictly increasing in z with theta(1) = theta0; theta**2 equals
    theta0**2 times the Arrhenius factor, so theta is the effective
    Thiele modulus at temperature z.  Vectorized over z.

    Raises
    ------
    ValueError
        If any z <= 0 or theta0 <= 0.
    """
    if theta0 <= 0:
        raise ValueError(f"theta0 must be > 0, got {theta0!r}")
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("temperature z must be > 0")
    out = theta0 * np.exp(0.5 * gamma * (1.0 - 1.0 / z))
    return out if out.ndim else float(out)
