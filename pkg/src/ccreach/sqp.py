"""Outer sequential-QP loop with tightening (tau) and variance-penalty (lambda) schedules.

Each pass linearizes every collision constraint at the current mean path,
checks the mean/std surrogate, bumps ``tau`` by ``delta`` and multiplies
``lambda`` by ``Delta`` when any surrogate is violated, then re-solves the
convex subproblem.  The tangent planes upper-bound the concave collision
function, so no trust region is needed.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ccreach.chance import (
    DegeneratePointError,
    expected_c,
    eta_to_k,
    linearize,
    surrogate_margin,
    variance_c,
)
from ccreach.dynamics import MomentTrajectory, control_to_moment_maps, rollout_moments
from ccreach.qp import ConstraintSpec, assemble_qp, solve_qp

log = logging.getLogger(__name__)

__all__ = [
    "SolverConfig",
    "SeedTrajectory",
    "PlanResult",
    "InfeasibleSubproblem",
    "STRATEGIES",
    "strategy_preset",
    "config_for_scenario",
    "seed_straight",
    "seed_via",
    "solve",
    "solve_homotopies",
]

STRATEGIES = {"LV": (0.00005, 10.0), "HC": (0.0001, 10.0)}


class InfeasibleSubproblem(RuntimeError):
    def __init__(self, message: str, rows: list[tuple[int, int]], iteration: int):
        super().__init__(message)
        self.rows = rows
        self.iteration = iteration


def strategy_preset(name: str) -> tuple[float, float]:
    """``(delta, Delta)`` for the low-velocity (LV) or high-clearance (HC) strategy."""
    key = str(name).upper()
    if key not in STRATEGIES:
        raise ValueError(f"unknown strategy {name!r}; expected one of {sorted(STRATEGIES)}")
    return STRATEGIES[key]


@dataclass(frozen=True)
class SolverConfig:
    eta: float = 0.9
    tau0: float = 0.0
    lambda0: float = 1.0
    delta: float = STRATEGIES["LV"][0]
    Delta: float = STRATEGIES["LV"][1]
    xi: float = 1e-2
    max_iter: int = 200
    strategy: str = "LV"
    qp_tol: float = 1e-10
    step_guard: bool = False

    def __post_init__(self):
        if not 0 <= self.eta < 1:
            raise ValueError(f"eta must lie in [0, 1), got {self.eta}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.Delta < 1:
            raise ValueError("Delta must be >= 1")
        if not self.xi > 0:
            raise ValueError("xi must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.tau0 < 0 or self.lambda0 < 0:
            raise ValueError("tau0 and lambda0 must be non-negative")

    @classmethod
    def for_strategy(cls, strategy: str, eta: float, **kw) -> "SolverConfig":
        if str(strategy).lower() == "custom":
            return cls(eta=eta, strategy="custom", **kw)
        delta, Delta = strategy_preset(strategy)
        kw.setdefault("delta", delta)
        kw.setdefault("Delta", Delta)
        return cls(eta=eta, strategy=str(strategy).upper(), **kw)


def config_for_scenario(scenario, strategy: str, eta: float, **overrides) -> SolverConfig:
    """Solver settings from the scenario's ``solver`` block, with explicit overrides on top."""
    kw = {k: v for k, v in dict(getattr(scenario, "solver", {}) or {}).items()
          if k in ("lambda0", "tau0", "xi", "max_iter")}
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return SolverConfig.for_strategy(strategy, eta, **kw)


@dataclass(frozen=True)
class SeedTrajectory:
    points: np.ndarray  # (T+1, 2)
    homotopy_label: str = "straight"

    @property
    def T(self) -> int:
        return len(self.points) - 1


def seed_straight(start, goal, T: int, label: str = "straight") -> SeedTrajectory:
    s = np.linspace(0.0, 1.0, T + 1)[:, None]
    start, goal = np.asarray(start, float), np.asarray(goal, float)
    pts = (1 - s) * start + s * goal
    pts[0], pts[-1] = start, goal
    return SeedTrajectory(pts, label)


def seed_via(start, goal, via_points, T: int, label: str | None = None) -> SeedTrajectory:
    """Arc-length parameterized polyline through the via points, with T+1 samples."""
    via = np.asarray(via_points, float).reshape(-1, 2)
    if label is None:
        label = "straight" if len(via) == 0 else "via"
    if len(via) == 0:
        return seed_straight(start, goal, T, label)
    knots = np.vstack([np.asarray(start, float), via, np.asarray(goal, float)])
    if T < len(knots) - 1:
        raise ValueError(f"horizon {T} shorter than the {len(knots) - 1} seed segments")
    seg = np.linalg.norm(np.diff(knots, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    if arc[-1] == 0:
        return SeedTrajectory(np.repeat(knots[:1], T + 1, axis=0), label)
    # place the via knots exactly on samples so the seed passes through them
    idx = np.round(arc / arc[-1] * T).astype(int)
    idx = np.maximum.accumulate(np.maximum(idx, np.arange(len(idx))))
    idx = np.minimum(idx, T - (len(idx) - 1 - np.arange(len(idx))))
    pts = np.empty((T + 1, 2))
    for k in range(len(knots) - 1):
        i0, i1 = idx[k], idx[k + 1]
        s = np.linspace(0.0, 1.0, i1 - i0 + 1)[:, None]
        pts[i0 : i1 + 1] = (1 - s) * knots[k] + s * knots[k + 1]
    return SeedTrajectory(pts, label)


@dataclass
class PlanResult:
    controls: np.ndarray  # (T, 2)
    moments: MomentTrajectory
    cost_effort: float
    cost_state: float
    cost_variance: float
    tau_final: float
    lambda_final: float
    k: float
    iterations: int
    margins: np.ndarray  # (n_obstacles, T+1); column 0 is not constrained
    converged: bool
    status: str = "converged"  # converged | max-iterations | infeasible
    homotopy_label: str = ""
    strategy: str = ""
    eta: float = float("nan")
    message: str = ""
    history: list = field(default_factory=list, repr=False)

    @property
    def J_opt(self) -> float:
        return self.cost_effort + self.cost_state

    @property
    def mean_positions(self) -> np.ndarray:
        return self.moments.positions

    @property
    def speeds(self) -> np.ndarray:
        return np.linalg.norm(self.moments.means[:, 2:4], axis=1)


def _costs(u, means, variances, weights, lam, T):
    effort = float(np.sum(u**2))
    state = 0.0
    for t in weights.window(T):
        state += float(weights.w @ ((means[t] - weights.target) ** 2 + variances[t]))
    var_term = lam * float(variances[:, :2].sum())
    return effort, state, var_term


def _linearize_all(obstacles, ref, T):
    lins = []
    for t in range(1, T + 1):
        for j, obs in enumerate(obstacles):
            x, y = ref[t]
            try:
                lin = linearize(obs, x, y)
            except DegeneratePointError:
                # nudge off the center, perpendicular to the local path direction
                d = ref[min(t + 1, T)] - ref[t - 1]
                nrm = np.hypot(*d)
                perp = np.array([-d[1], d[0]]) / nrm if nrm > 0 else np.array([0.0, 1.0])
                lin = linearize(obs, x + 1e-6 * perp[0], y + 1e-6 * perp[1])
            lins.append(ConstraintSpec(j, t, lin))
    return lins


def _margins(lins, pos, var, k, n_obs, T):
    out = np.full((n_obs, T + 1), -np.inf)
    for spec in lins:
        t = spec.t
        e = expected_c(spec.lin, pos[t, 0], pos[t, 1])
        v = variance_c(spec.lin, var[t, 0], var[t, 1])
        out[spec.obstacle, t] = surrogate_margin(e, v, k)
    return out


def solve(scenario, seed: SeedTrajectory, config: SolverConfig) -> PlanResult:
    """Run the tau/lambda-scheduled sequential QP from ``seed``."""
    sys, x0, weights = scenario.system, scenario.initial, scenario.weights
    obstacles = list(scenario.obstacles)
    T = sys.T
    ref = np.array(seed.points, float)
    if ref.shape != (T + 1, 2):
        raise ValueError(f"seed has {len(ref)} points, horizon needs {T + 1}")
    if np.max(np.abs(ref[0] - x0.mean[:2])) > 1e-9:
        raise ValueError("seed must start at the scenario start")
    if weights.terminal != "soft" and np.max(np.abs(ref[-1] - weights.target[:2])) > 1e-9:
        raise ValueError("seed must end at the scenario goal")
    k = eta_to_k(config.eta)
    maps = control_to_moment_maps(sys, x0)
    tau, lam = config.tau0, config.lambda0
    u = np.zeros(2 * T)
    var = maps.variances(u)[:, :2]
    J_hist: list[float] = []
    history = []
    status, message = "max-iterations", ""
    margins = np.full((len(obstacles), T + 1), -np.inf)
    it = 0
    for it in range(1, config.max_iter + 1):
        lins = _linearize_all(obstacles, ref, T)
        margins = _margins(lins, ref, var, k, len(obstacles), T)
        feasible = not np.any(margins > 0)
        if feasible and len(J_hist) >= 2 and abs(J_hist[-1] - J_hist[-2]) <= config.xi:
            status = "converged"
            it -= 1
            break
        if not feasible:
            tau += config.delta
            lam *= config.Delta
        prob = assemble_qp(sys, x0, weights, lins, tau, lam, maps=maps)
        sol = solve_qp(prob, tol=config.qp_tol)
        if sol.status == "infeasible":
            rows = [prob.tags[i - len(prob.b_eq)] for i in (sol.certificate or {}).get("rows", {})
                    if i >= len(prob.b_eq)]
            status = "infeasible"
            message = f"subproblem infeasible at iteration {it}; rows (obstacle, t): {rows}"
            log.warning(message)
            break
        u_new = sol.u_star
        if config.step_guard and J_hist:
            old_viol = max(float(np.max(margins)), 0.0)
            trial = maps.means(u_new)[:, :2]
            new_viol = max(float(np.max(_margins(lins, trial, maps.variances(u_new)[:, :2], k,
                                                  len(obstacles), T))), 0.0)
            if old_viol > 0 and new_viol > 10 * old_viol:
                u_new = 0.5 * (u + u_new)
        u = u_new
        means = maps.means(u)
        variances = maps.variances(u)
        ref = means[:, :2].copy()
        var = variances[:, :2]
        J_hist.append(sum(_costs(u, means, variances, weights, lam, T)[:2]))
        history.append({"iteration": it, "tau": tau, "lambda": lam, "J_opt": J_hist[-1],
                        "max_margin": float(np.max(margins)) if margins.size else -np.inf,
                        "qp_iterations": sol.iterations, "qp_status": sol.status,
                        "qp_kkt": tuple(float(r) for r in sol.kkt_residuals),
                        "qp_f_norm": float(np.linalg.norm(prob.f))})
        log.debug("iter %d tau=%.3g lambda=%.3g J=%.6g", it, tau, lam, J_hist[-1])
    else:
        # the last QP may have satisfied everything; check once more
        lins = _linearize_all(obstacles, ref, T)
        margins = _margins(lins, ref, var, k, len(obstacles), T)
        if not np.any(margins > 0) and len(J_hist) >= 2 and abs(J_hist[-1] - J_hist[-2]) <= config.xi:
            status = "converged"
        it = config.max_iter

    controls = u.reshape(T, 2)
    moments = rollout_moments(sys, x0, controls)
    means = moments.means
    variances = np.array([np.diag(s.cov) for s in moments.states])
    effort, state, var_term = _costs(controls, means, variances, weights, lam, T)
    if not margins.size:
        margins = np.zeros((0, T + 1))
    return PlanResult(
        controls=controls,
        moments=moments,
        cost_effort=effort,
        cost_state=state,
        cost_variance=var_term,
        tau_final=tau,
        lambda_final=lam,
        k=k,
        iterations=it,
        margins=margins,
        converged=status == "converged",
        status=status,
        homotopy_label=seed.homotopy_label,
        strategy=config.strategy,
        eta=config.eta,
        message=message,
        history=history,
    )


def solve_homotopies(scenario, seeds, config: SolverConfig, workers: int | None = None) -> list[PlanResult]:
    """Independent solve per seed; a failing seed yields a non-converged result."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")

    def one(seed):
        try:
            return solve(scenario, seed, config)
        except (ValueError, np.linalg.LinAlgError) as exc:
            T = scenario.system.T
            zeros = np.zeros((T, 2))
            return PlanResult(zeros, rollout_moments(scenario.system, scenario.initial, zeros),
                              0.0, 0.0, 0.0, config.tau0, config.lambda0, eta_to_k(config.eta), 0,
                              np.zeros((len(scenario.obstacles), T + 1)), False, "error",
                              seed.homotopy_label, config.strategy, config.eta, str(exc))

    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(one, seeds))
    return [one(s) for s in seeds]
