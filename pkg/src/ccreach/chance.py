"""Collision-constraint algebra for circular obstacles with uncertain radius.

The collision function ``C = -(x - x_j)^2 - (y - y_j)^2 + R_j^2`` is concave in
the hand position, so its tangent plane at a reference point is a global upper
bound.  Mean and variance of that affine surrogate follow in closed form when
the position and the radius are independent Gaussians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Obstacle",
    "AffineConstraint",
    "DegeneratePointError",
    "eval_collision",
    "linearize",
    "expected_c",
    "expected_c_coeffs",
    "variance_c",
    "surrogate_margin",
    "eta_to_k",
    "k_to_eta",
]


class DegeneratePointError(ValueError):
    """Linearization requested at the obstacle center, where the gradient vanishes."""


@dataclass(frozen=True)
class Obstacle:
    mu_x: float
    mu_y: float
    mu_R: float
    sigma_R: float = 0.0

    def __post_init__(self):
        if not self.mu_R > 0:
            raise ValueError(f"obstacle radius must be positive, got {self.mu_R}")
        if self.sigma_R < 0:
            raise ValueError(f"radius std must be non-negative, got {self.sigma_R}")
        if self.sigma_R > self.mu_R / 3 * (1 + 1e-12):
            raise ValueError(
                f"radius std {self.sigma_R} exceeds a third of the mean radius {self.mu_R}"
            )

    @property
    def center(self) -> np.ndarray:
        return np.array([self.mu_x, self.mu_y])


@dataclass(frozen=True)
class AffineConstraint:
    ref_x: float
    ref_y: float
    a_x: float
    a_y: float
    b: float
    obstacle: Obstacle

    def value(self, x, y, R=None):
        """Affine surrogate at ``(x, y)``; ``R`` defaults to the mean radius."""
        out = self.a_x * (x - self.ref_x) + self.a_y * (y - self.ref_y) + self.b
        if R is not None:
            out = out + R**2 - self.obstacle.mu_R ** 2
        return out


def eval_collision(x, y, obs: Obstacle, R=None):
    """Positive means the point lies inside the disc of radius ``R``."""
    R = obs.mu_R if R is None else R
    return -((x - obs.mu_x) ** 2) - (y - obs.mu_y) ** 2 + R**2


def linearize(obs: Obstacle, ref_x: float, ref_y: float) -> AffineConstraint:
    dx, dy = ref_x - obs.mu_x, ref_y - obs.mu_y
    if math.hypot(dx, dy) <= 1e-9:
        raise DegeneratePointError(
            f"reference ({ref_x}, {ref_y}) coincides with obstacle center"
        )
    return AffineConstraint(
        float(ref_x),
        float(ref_y),
        -2.0 * dx,
        -2.0 * dy,
        float(eval_collision(ref_x, ref_y, obs)),
        obs,
    )


def expected_c_coeffs(lin: AffineConstraint) -> tuple[float, float, float]:
    """``(a_x, a_y, const)`` with ``E[C] = a_x*mu_x + a_y*mu_y + const``."""
    o = lin.obstacle
    const = (
        o.sigma_R**2
        + o.mu_R**2
        - o.mu_x**2
        - o.mu_y**2
        + lin.ref_x**2
        + lin.ref_y**2
    )
    return lin.a_x, lin.a_y, const


def expected_c(lin: AffineConstraint, mu_x_t, mu_y_t):
    o = lin.obstacle
    h1 = (
        o.mu_R**2
        + 2 * mu_x_t * o.mu_x
        - o.mu_x**2
        + 2 * mu_y_t * o.mu_y
        - o.mu_y**2
        - 2 * mu_x_t * lin.ref_x
        - 2 * mu_y_t * lin.ref_y
        + lin.ref_x**2
        + lin.ref_y**2
    )
    return o.sigma_R**2 + h1


def variance_c(lin: AffineConstraint, sigma2_x, sigma2_y):
    """Variance of the affine surrogate; the positional part is a sum of squares."""
    if np.any(np.asarray(sigma2_x) < 0) or np.any(np.asarray(sigma2_y) < 0):
        raise ValueError("positional variances must be non-negative")
    o = lin.obstacle
    radius_part = 4 * o.mu_R**2 * o.sigma_R**2 + 2 * o.sigma_R**4
    return (
        radius_part
        + 4 * (lin.ref_x - o.mu_x) ** 2 * sigma2_x
        + 4 * (lin.ref_y - o.mu_y) ** 2 * sigma2_y
    )


def surrogate_margin(e_c, var_c, k: float):
    """``E[C] + k*sqrt(Var[C])``; the chance constraint is certified when <= 0."""
    return e_c + k * np.sqrt(var_c)


def eta_to_k(eta: float) -> float:
    if not 0 <= eta < 1:
        raise ValueError(f"eta must lie in [0, 1), got {eta}")
    return math.sqrt(eta / (1 - eta))


def k_to_eta(k: float) -> float:
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    return k * k / (1 + k * k)
