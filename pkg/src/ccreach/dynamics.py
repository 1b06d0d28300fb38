"""Stochastic triple integrator in 2D with signal-dependent jerk noise.

State ordering is ``(x, y, xd, yd, xdd, ydd)`` and the control is the jerk
``(u_x, u_y)``.  Controls are open-loop decision variables, so the state stays
exactly Gaussian and its first two moments can be propagated in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SystemModel",
    "StateMoments",
    "MomentTrajectory",
    "AffineQuadraticMaps",
    "make_system",
    "propagate_mean",
    "propagate_covariance",
    "rollout_moments",
    "control_to_moment_maps",
    "AXIS_OF_STATE",
]

NX = 6
NU = 2
# control axis driving each state component
AXIS_OF_STATE = np.array([0, 1, 0, 1, 0, 1])


@dataclass(frozen=True)
class SystemModel:
    dt: float
    T: int
    A: np.ndarray
    B: np.ndarray
    c_x: float
    c_y: float

    @property
    def noise(self) -> np.ndarray:
        return np.array([self.c_x, self.c_y])


@dataclass(frozen=True)
class StateMoments:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def at_rest(cls, x: float, y: float, cov: np.ndarray | None = None) -> "StateMoments":
        mean = np.array([x, y, 0.0, 0.0, 0.0, 0.0])
        return cls(mean, np.zeros((NX, NX)) if cov is None else np.asarray(cov, float))

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2]


@dataclass(frozen=True)
class MomentTrajectory:
    states: list[StateMoments]

    def __len__(self) -> int:
        return len(self.states)

    @property
    def means(self) -> np.ndarray:
        """(T+1, 6) array of means."""
        return np.array([s.mean for s in self.states])

    @property
    def covs(self) -> np.ndarray:
        return np.array([s.cov for s in self.states])

    @property
    def positions(self) -> np.ndarray:
        return self.means[:, :2]

    @property
    def position_variances(self) -> np.ndarray:
        """(T+1, 2) array of (var_x, var_y)."""
        c = self.covs
        return np.stack([c[:, 0, 0], c[:, 1, 1]], axis=1)


def make_system(dt: float, T: int, c_x: float = 0.15, c_y: float = 0.15) -> SystemModel:
    """Exact zero-order-hold discretization of the jerk-driven triple integrator."""
    if not np.isfinite(dt) or dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if int(T) != T or T < 2:
        raise ValueError(f"horizon T must be an integer >= 2, got {T}")
    if c_x < 0 or c_y < 0:
        raise ValueError(f"noise fractions must be non-negative, got ({c_x}, {c_y})")
    A1 = np.array([[1.0, dt, dt**2 / 2], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
    B1 = np.array([dt**3 / 6, dt**2 / 2, dt])
    A = np.zeros((NX, NX))
    B = np.zeros((NX, NU))
    for axis in range(NU):
        idx = np.arange(axis, NX, NU)
        A[np.ix_(idx, idx)] = A1
        B[idx, axis] = B1
    return SystemModel(float(dt), int(T), A, B, float(c_x), float(c_y))


def propagate_mean(sys: SystemModel, mean: np.ndarray, u: np.ndarray) -> np.ndarray:
    mean = np.asarray(mean, float)
    u = np.asarray(u, float)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(u))):
        raise ValueError("mean and control must be finite")
    return sys.A @ mean + sys.B @ u


def noise_covariance(sys: SystemModel, u: np.ndarray) -> np.ndarray:
    """Jerk-noise covariance ``diag(c_x^2 u_x^2, c_y^2 u_y^2)`` for one step."""
    return np.diag((sys.noise * np.asarray(u, float)) ** 2)


def propagate_covariance(sys: SystemModel, cov: np.ndarray, u: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, float)
    scale = max(1.0, float(np.max(np.abs(cov))))
    if np.max(np.abs(cov - cov.T)) > 1e-9 * scale:
        raise ValueError("covariance must be symmetric")
    out = sys.A @ cov @ sys.A.T + sys.B @ noise_covariance(sys, u) @ sys.B.T
    return 0.5 * (out + out.T)


def _as_controls(sys: SystemModel, u) -> np.ndarray:
    u = np.asarray(u, float)
    if u.ndim == 1 and u.size == NU * sys.T:
        u = u.reshape(sys.T, NU)
    if u.shape != (sys.T, NU):
        raise ValueError(f"expected controls of shape ({sys.T}, 2), got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("controls must be finite")
    return u


def rollout_moments(sys: SystemModel, x0: StateMoments, u) -> MomentTrajectory:
    u = _as_controls(sys, u)
    states = [StateMoments(np.asarray(x0.mean, float).copy(), np.asarray(x0.cov, float).copy())]
    for t in range(sys.T):
        prev = states[-1]
        states.append(
            StateMoments(propagate_mean(sys, prev.mean, u[t]), propagate_covariance(sys, prev.cov, u[t]))
        )
    return MomentTrajectory(states)


@dataclass(frozen=True)
class AffineQuadraticMaps:
    """Closed-form moment maps in the stacked control ``u_flat = u.reshape(-1)``.

    ``mean[t] = mean_offset[t] + mean_gain[t] @ u_flat`` and, per state
    component ``i`` driven by axis ``a = AXIS_OF_STATE[i]``,
    ``var[t, i] = var_offset[t, i] + sum_s var_gain[t, i, s] * c_a**2 * u[s, a]**2``.
    """

    mean_offset: np.ndarray  # (T+1, 6)
    mean_gain: np.ndarray  # (T+1, 6, 2T)
    var_offset: np.ndarray  # (T+1, 6)
    var_gain: np.ndarray  # (T+1, 6, T)
    noise: np.ndarray = field(repr=False)

    @property
    def T(self) -> int:
        return self.var_gain.shape[2]

    def means(self, u) -> np.ndarray:
        u_flat = np.asarray(u, float).reshape(-1)
        return self.mean_offset + self.mean_gain @ u_flat

    def variances(self, u) -> np.ndarray:
        u = np.asarray(u, float).reshape(-1, NU)
        # (T, 6): squared noise std per step for the axis feeding each component
        w = ((u * self.noise) ** 2)[:, AXIS_OF_STATE]
        return self.var_offset + np.einsum("tis,si->ti", self.var_gain, w)

    def noise_weights(self) -> np.ndarray:
        """(T+1, 6, 2T) coefficients of ``u_flat**2`` in each variance."""
        T = self.T
        out = np.zeros(self.var_gain.shape[:2] + (NU * T,))
        for i in range(NX):
            a = AXIS_OF_STATE[i]
            out[:, i, a::NU] = self.var_gain[:, i, :] * self.noise[a] ** 2
        return out


def control_to_moment_maps(sys: SystemModel, x0: StateMoments) -> AffineQuadraticMaps:
    T = sys.T
    # impulse responses A^k B for k = 0..T-1
    resp = np.empty((T, NX, NU))
    resp[0] = sys.B
    for k in range(1, T):
        resp[k] = sys.A @ resp[k - 1]
    mean_offset = np.empty((T + 1, NX))
    var_offset = np.empty((T + 1, NX))
    m = np.asarray(x0.mean, float)
    P = np.asarray(x0.cov, float)
    for t in range(T + 1):
        mean_offset[t] = m
        var_offset[t] = np.diag(P)
        m = sys.A @ m
        P = sys.A @ P @ sys.A.T
    mean_gain = np.zeros((T + 1, NX, NU * T))
    var_gain = np.zeros((T + 1, NX, T))
    own = resp[:, np.arange(NX), AXIS_OF_STATE]  # (T, 6): response of each component to its own axis
    for t in range(1, T + 1):
        for s in range(t):
            mean_gain[t, :, NU * s : NU * s + NU] = resp[t - 1 - s]
            var_gain[t, :, s] = own[t - 1 - s] ** 2
    return AffineQuadraticMaps(mean_offset, mean_gain, var_offset, var_gain, sys.noise)
