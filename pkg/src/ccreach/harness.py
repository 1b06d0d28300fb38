"""Sweeps over the avoidance level for several strategies and homotopy seeds.

A sweep solves every (eta, strategy, seed) cell, validates each plan with the
Monte Carlo oracle and collects the summary numbers used for the cost-ratio
studies: control effort, clearance, and where in the horizon the speed peaks.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from ccreach.mc_oracle import simulate
from ccreach.scenario import Scenario, _fmt, atomic_write
from ccreach.sqp import PlanResult, SeedTrajectory, config_for_scenario, solve

log = logging.getLogger(__name__)

__all__ = [
    "SweepSpec",
    "SweepRow",
    "SweepReport",
    "run_sweep",
    "ratio_curve",
    "min_clearance",
    "time_of_peak_speed",
    "REPORT_COLUMNS",
]

ETA_RANGE = (0.5, 0.995)


@dataclass(frozen=True)
class SweepSpec:
    scenario: Scenario
    eta_values: Sequence[float]
    strategies: Sequence[str] = ("LV", "HC")
    seeds: Sequence[SeedTrajectory] | None = None  # None: every seed the scenario lists
    mc_rollouts: int = 100_000
    mc_seed: int = 0
    solver_overrides: Mapping = field(default_factory=dict)

    def __post_init__(self):
        etas = [float(e) for e in self.eta_values]
        if not etas:
            raise ValueError("eta_values must not be empty")
        lo, hi = ETA_RANGE
        if any(not lo <= e <= hi for e in etas):
            raise ValueError(f"eta values must lie in [{lo}, {hi}]")
        if any(b <= a for a, b in zip(etas, etas[1:])):
            raise ValueError("eta values must be strictly increasing")
        if not self.strategies:
            raise ValueError("need at least one strategy")
        for s in self.strategies:
            if str(s).upper() not in ("LV", "HC"):
                raise ValueError(f"unknown strategy {s!r}; sweeps use LV and HC")
        if self.mc_rollouts < 0:
            raise ValueError("mc_rollouts must be non-negative")
        object.__setattr__(self, "eta_values", tuple(etas))
        object.__setattr__(self, "strategies", tuple(str(s).upper() for s in self.strategies))

    def seed_list(self) -> list[SeedTrajectory]:
        if self.seeds is None:
            return self.scenario.all_seeds()
        return list(self.seeds)


@dataclass(frozen=True)
class SweepRow:
    eta: float
    strategy: str
    homotopy_label: str
    J_U: float
    J_total: float
    min_clearance: float
    time_of_peak_speed: float
    mc_per_step_min: float
    converged: bool
    status: str
    iterations: int
    tau: float
    lam: float


REPORT_COLUMNS = [f.name for f in fields(SweepRow)]


@dataclass
class SweepReport:
    rows: list[SweepRow]
    mc_rollouts: int = 0
    plans: list[PlanResult] = field(default_factory=list, repr=False)

    def select(self, selector) -> list[SweepRow]:
        match = _selector(selector)
        return [r for r in self.rows if match(r)]

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# mc_rollouts={self.mc_rollouts}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([_cell(v) for v in asdict(r).values()])
        return buf.getvalue()

    def to_csv(self, path) -> None:
        atomic_write(path, self.to_csv_text())

    def export_plot_data(self, directory, ratios: Mapping[str, tuple] | None = None) -> list[Path]:
        """Write two-column ``x y`` files: J_U versus eta per (strategy, seed), plus ratio curves.

        ``ratios`` maps an output name to a (numerator, denominator) selector pair.
        Returns the paths written.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        keys = sorted({(r.strategy, r.homotopy_label) for r in self.rows})
        for strategy, label in keys:
            pts = [(r.eta, r.J_U) for r in self.rows
                   if r.strategy == strategy and r.homotopy_label == label and r.converged]
            path = directory / f"J_U_{strategy}_{_safe(label)}.dat"
            atomic_write(path, _xy_text("eta", "J_U", pts))
            written.append(path)
        for name, (num, den) in (ratios or {}).items():
            curve, _ = ratio_curve(self, num, den)
            path = directory / f"ratio_{_safe(name)}.dat"
            atomic_write(path, _xy_text("eta", "ratio", curve))
            written.append(path)
        return written


Selector = Union[Mapping, Callable[[SweepRow], bool]]


def _selector(sel: Selector) -> Callable[[SweepRow], bool]:
    if callable(sel):
        return sel
    want = dict(sel)
    if "strategy" in want:
        want["strategy"] = str(want["strategy"]).upper()
    return lambda r: all(getattr(r, k) == v for k, v in want.items())


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return _fmt(v)
    return str(v)


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in str(name)) or "unnamed"


def _xy_text(xname, yname, pts) -> str:
    lines = [f"# {xname} {yname}"]
    lines += [f"{_fmt(x)} {_fmt(y)}" for x, y in pts]
    return "\n".join(lines) + "\n"


def min_clearance(plan: PlanResult, obstacles) -> float:
    """Smallest gap between the mean path and any obstacle's mean boundary."""
    pos = plan.mean_positions
    if not obstacles:
        return math.inf
    return float(min(np.min(np.hypot(pos[:, 0] - o.mu_x, pos[:, 1] - o.mu_y) - o.mu_R)
                     for o in obstacles))


def time_of_peak_speed(plan: PlanResult) -> float:
    """Time of maximal mean speed as a fraction of the horizon (first maximum wins)."""
    speeds = plan.speeds
    return float(np.argmax(speeds)) / (len(speeds) - 1)


def _row(spec: SweepSpec, plan: PlanResult) -> SweepRow:
    sc = spec.scenario
    mc_min = math.nan
    if spec.mc_rollouts and plan.status != "error":
        rep = simulate(sc.system, sc.initial, plan.controls, list(sc.obstacles),
                       spec.mc_rollouts, spec.mc_seed)
        mc_min = rep.min_per_step()
    return SweepRow(
        eta=plan.eta,
        strategy=plan.strategy,
        homotopy_label=plan.homotopy_label,
        J_U=plan.cost_effort,
        J_total=plan.cost_effort + plan.cost_state + plan.cost_variance,
        min_clearance=min_clearance(plan, sc.obstacles),
        time_of_peak_speed=time_of_peak_speed(plan),
        mc_per_step_min=mc_min,
        converged=plan.converged,
        status=plan.status,
        iterations=plan.iterations,
        tau=plan.tau_final,
        lam=plan.lambda_final,
    )


def _failed_row(eta, strategy, label, exc) -> SweepRow:
    log.warning("solve failed for eta=%s %s %s: %s", eta, strategy, label, exc)
    nan = math.nan
    return SweepRow(eta, strategy, label, nan, nan, nan, nan, nan, False, "error", 0, nan, nan)


def run_sweep(spec: SweepSpec) -> SweepReport:
    """Solve and validate every (eta, strategy, seed) cell; failures become non-converged rows."""
    seeds = spec.seed_list()
    rows, plans = [], []
    for eta in spec.eta_values:
        for strategy in spec.strategies:
            cfg = config_for_scenario(spec.scenario, strategy, eta, **dict(spec.solver_overrides))
            for seed in seeds:
                try:
                    plan = solve(spec.scenario, seed, cfg)
                except (ValueError, np.linalg.LinAlgError) as exc:
                    rows.append(_failed_row(eta, strategy, seed.homotopy_label, exc))
                    continue
                rows.append(_row(spec, plan))
                plans.append(plan)
    return SweepReport(rows, spec.mc_rollouts, plans)


def ratio_curve(report: SweepReport, numerator: Selector, denominator: Selector):
    """J_U(numerator) / J_U(denominator) per eta.

    Returns ``(curve, warnings)``, where ``curve`` is a list of (eta, ratio)
    pairs.  An eta is skipped, with a warning, when either side has no
    converged row there.  If a selector matches several converged rows at one
    eta, the first one is used.
    """
    num, den = _selector(numerator), _selector(denominator)
    warnings: list[str] = []
    num_rows = [r for r in report.rows if num(r)]
    den_rows = [r for r in report.rows if den(r)]
    if not num_rows or not den_rows:
        warnings.append("selector matched no rows")
        return [], warnings
    etas = sorted({r.eta for r in num_rows} | {r.eta for r in den_rows})
    curve = []
    for eta in etas:
        a = next((r for r in num_rows if r.eta == eta and r.converged), None)
        b = next((r for r in den_rows if r.eta == eta and r.converged), None)
        if a is None or b is None:
            side = "numerator" if a is None else "denominator"
            warnings.append(f"eta={eta:g}: no converged {side} row, skipped")
            continue
        curve.append((eta, a.J_U / b.J_U))
    return curve, warnings
