"""Monte Carlo ground truth for moments, surrogate statistics and avoidance rates.

Rollouts are split into fixed-size blocks, each with its own Philox stream
keyed by ``(seed, block index)``.  The block layout does not depend on the
number of workers, so serial and threaded runs agree bit for bit.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ccreach.chance import AffineConstraint, Obstacle
from ccreach.dynamics import StateMoments, SystemModel, _as_controls

__all__ = [
    "MCReport",
    "ConstraintMoments",
    "simulate",
    "estimate_constraint_moments",
    "sample_linearized_constraint",
    "binomial_sigma",
]

BLOCK = 8192


def _rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


def binomial_sigma(p: float, n: int) -> float:
    return float(np.sqrt(p * (1 - p) / n))


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    return vecs * np.sqrt(np.clip(vals, 0, None))


@dataclass
class MCReport:
    n_rollouts: int
    per_step_avoidance: np.ndarray  # (n_obstacles, T+1)
    joint_avoidance: float
    empirical_means: np.ndarray  # (T+1, 6)
    empirical_covs: np.ndarray  # (T+1, 6, 6), unbiased
    seed: int
    clamped_fraction: float = 0.0

    def min_per_step(self, first_step: int = 1) -> float:
        if self.per_step_avoidance.size == 0:
            return 1.0
        return float(self.per_step_avoidance[:, first_step:].min())

    def violations(self, eta: float, first_step: int = 1) -> list[tuple[int, int, float]]:
        """(obstacle, t, rate) cells whose rate falls below eta - 3 binomial sigma."""
        floor = eta - 3 * binomial_sigma(eta, self.n_rollouts)
        bad = []
        for j, row in enumerate(self.per_step_avoidance):
            for t in range(first_step, len(row)):
                if row[t] < floor:
                    bad.append((j, t, float(row[t])))
        return bad

    def to_csv(self, path) -> None:
        """Per-step avoidance matrix: one row per timestep, one column per obstacle."""
        n_obs, n_t = self.per_step_avoidance.shape
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# n_rollouts={self.n_rollouts}\n")
            fh.write(f"# seed={self.seed}\n")
            fh.write(f"# joint_avoidance={self.joint_avoidance!r}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"obstacle_{j}" for j in range(n_obs)])
            for t in range(n_t):
                w.writerow([t] + [repr(float(v)) for v in self.per_step_avoidance[:, t]])


class _BlockStats(NamedTuple):
    n: int
    mean: np.ndarray
    m2: np.ndarray
    avoid: np.ndarray
    joint: int
    clamped: int


def _run_block(sys, x0, u, obstacles, n_b, seed, block) -> _BlockStats:
    rng = _rng(seed, block)
    n_obs = len(obstacles)
    T = sys.T
    centers = np.array([[o.mu_x, o.mu_y] for o in obstacles]).reshape(n_obs, 2)
    if n_obs:
        R = rng.normal(
            [o.mu_R for o in obstacles], [o.sigma_R for o in obstacles], size=(n_b, n_obs)
        )
    else:
        R = np.zeros((n_b, 0))
    clamped = int(np.count_nonzero(R < 0))
    R = np.maximum(R, 0.0)
    R2 = R**2
    X = np.asarray(x0.mean, float) + rng.standard_normal((n_b, 6)) @ _psd_sqrt(np.asarray(x0.cov, float)).T
    mean = np.empty((T + 1, 6))
    m2 = np.empty((T + 1, 6, 6))
    avoid = np.zeros((n_obs, T + 1), dtype=np.int64)
    ok_all = np.ones(n_b, dtype=bool)
    At, Bt = sys.A.T, sys.B.T
    noise = sys.noise
    for t in range(T + 1):
        mu = X.mean(axis=0)
        D = X - mu
        mean[t] = mu
        m2[t] = D.T @ D
        if n_obs:
            d2 = (X[:, None, 0] - centers[:, 0]) ** 2 + (X[:, None, 1] - centers[:, 1]) ** 2
            ok = (R2 - d2) <= 0
            avoid[:, t] = ok.sum(axis=0)
            ok_all &= ok.all(axis=1)
        if t < T:
            phi = rng.standard_normal((n_b, 2))
            U = u[t] * (1.0 + phi * noise)
            X = X @ At + U @ Bt
    return _BlockStats(n_b, mean, m2, avoid, int(ok_all.sum()), clamped)


def simulate(
    sys: SystemModel,
    x0: StateMoments,
    u,
    obstacles: list[Obstacle],
    n: int,
    seed: int,
    workers: int | None = None,
) -> MCReport:
    if n < 1:
        raise ValueError("need at least one rollout")
    u = _as_controls(sys, u)
    sizes = [min(BLOCK, n - s) for s in range(0, n, BLOCK)]
    args = [(sys, x0, u, obstacles, nb, seed, b) for b, nb in enumerate(sizes)]
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            blocks = list(ex.map(lambda a: _run_block(*a), args))
    else:
        blocks = [_run_block(*a) for a in args]
    # Chan et al. pairwise merge, in block order
    cnt, mean, m2 = blocks[0].n, blocks[0].mean, blocks[0].m2
    for blk in blocks[1:]:
        tot = cnt + blk.n
        delta = blk.mean - mean
        mean = mean + delta * (blk.n / tot)
        m2 = m2 + blk.m2 + np.einsum("ti,tj->tij", delta, delta) * (cnt * blk.n / tot)
        cnt = tot
    covs = m2 / max(n - 1, 1)
    avoid = sum(b.avoid for b in blocks)
    n_obs = len(obstacles)
    return MCReport(
        n_rollouts=n,
        per_step_avoidance=avoid / n,
        joint_avoidance=sum(b.joint for b in blocks) / n,
        empirical_means=mean,
        empirical_covs=0.5 * (covs + np.swapaxes(covs, 1, 2)),
        seed=seed,
        clamped_fraction=sum(b.clamped for b in blocks) / max(n * n_obs, 1),
    )


class ConstraintMoments(NamedTuple):
    mean: float
    variance: float
    se_mean: float
    se_variance: float


def _moments(samples: np.ndarray) -> ConstraintMoments:
    n = len(samples)
    m = float(samples.mean())
    d = samples - m
    var = float(d @ d / (n - 1))
    m4 = float(np.mean(d**4))
    se_var = float(np.sqrt(max(m4 - var**2, 0.0) / n))
    return ConstraintMoments(m, var, float(np.sqrt(var / n)), se_var)


def sample_linearized_constraint(
    lin: AffineConstraint, mu_x, mu_y, var_x, var_y, n: int, seed: int
) -> ConstraintMoments:
    """Sample the surrogate with independent Gaussian position and radius."""
    rng = _rng(seed, 0)
    x = mu_x + np.sqrt(var_x) * rng.standard_normal(n)
    y = mu_y + np.sqrt(var_y) * rng.standard_normal(n)
    o = lin.obstacle
    R = np.maximum(rng.normal(o.mu_R, o.sigma_R, n), 0.0)
    return _moments(lin.value(x, y, R))


def estimate_constraint_moments(
    sys: SystemModel, x0: StateMoments, u, lin: AffineConstraint, t: int, n: int, seed: int
) -> ConstraintMoments:
    """Sample mean/variance of the surrogate at state ``t`` from full rollouts."""
    if n < 1000:
        raise ValueError("use at least 1000 samples")
    u = _as_controls(sys, u)
    rng = _rng(seed, 0)
    o = lin.obstacle
    R = np.maximum(rng.normal(o.mu_R, o.sigma_R, n), 0.0)
    X = np.asarray(x0.mean, float) + rng.standard_normal((n, 6)) @ _psd_sqrt(np.asarray(x0.cov, float)).T
    for s in range(t):
        phi = rng.standard_normal((n, 2))
        X = X @ sys.A.T + (u[s] * (1.0 + phi * sys.noise)) @ sys.B.T
    return _moments(lin.value(X[:, 0], X[:, 1], R))
