"""Scenario files (JSON, version 1) and plan export/import (CSV with a metadata header)."""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ccreach.chance import Obstacle
from ccreach.dynamics import StateMoments, SystemModel, make_system
from ccreach.qp import TERMINAL_MODES, CostWeights

__all__ = [
    "Scenario",
    "ScenarioError",
    "SeedSpec",
    "load_scenario",
    "parse_scenario",
    "export_plan",
    "read_plan",
    "PlanFile",
    "atomic_write",
    "PLAN_COLUMNS",
]

DEFAULT_DT = 0.01
DEFAULT_STEPS = 100
DEFAULT_NOISE = 0.15
DEFAULT_W = (1e4, 1e4, 1e2, 1e2, 1.0, 1.0)

PLAN_COLUMNS = ["t", "mu_x", "mu_y", "sigma2_x", "sigma2_y", "speed", "u_x", "u_y"]

_TOP_KEYS = {"version", "name", "start", "goal", "obstacles", "system", "weights",
             "seeds", "initial", "solver"}
_OBS_KEYS = {"x", "y", "radius_mean", "radius_std"}
_SYS_KEYS = {"dt", "steps", "noise_x", "noise_y"}
_W_KEYS = {"w", "target", "window", "terminal"}
_SEED_KEYS = {"label", "via"}
_INIT_KEYS = {"state", "cov"}
_SOLVER_KEYS = {"lambda0", "tau0", "xi", "max_iter"}


class ScenarioError(ValueError):
    """Scenario file failed to parse or violates an invariant."""


@dataclass(frozen=True)
class SeedSpec:
    label: str
    via: np.ndarray


@dataclass(frozen=True)
class Scenario:
    start: np.ndarray
    goal: np.ndarray
    obstacles: tuple
    system: SystemModel
    weights: CostWeights
    initial: StateMoments
    seeds: tuple = ()
    solver: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if np.allclose(self.start, self.goal, atol=0, rtol=0):
            raise ScenarioError("start and goal coincide")
        for j, o in enumerate(self.obstacles):
            if np.hypot(*(self.goal - o.center)) <= o.mu_R:
                raise ScenarioError(f"goal lies inside obstacle {j}")
            if np.hypot(*(self.start - o.center)) <= o.mu_R:
                raise ScenarioError(f"start lies inside obstacle {j}")
        self.weights.window(self.system.T)

    def seed(self, label: str | None = None):
        """Seed trajectory for ``label``; the first listed seed (or straight line) by default."""
        from ccreach.sqp import seed_straight, seed_via

        T = self.system.T
        if label is None:
            if not self.seeds:
                return seed_straight(self.start, self.goal, T)
            spec = self.seeds[0]
        elif label == "straight" and all(s.label != "straight" for s in self.seeds):
            return seed_straight(self.start, self.goal, T)
        else:
            matches = [s for s in self.seeds if s.label == label]
            if not matches:
                raise ScenarioError(f"no seed labelled {label!r}")
            spec = matches[0]
        return seed_via(self.start, self.goal, spec.via, T, spec.label)

    def all_seeds(self):
        if not self.seeds:
            return [self.seed()]
        return [self.seed(s.label) for s in self.seeds]

    def with_noise(self, c_x: float, c_y: float | None = None) -> "Scenario":
        from dataclasses import replace

        c_y = c_x if c_y is None else c_y
        sys = make_system(self.system.dt, self.system.T, c_x, c_y)
        return replace(self, system=sys)


def _check_keys(obj, allowed, where, lax):
    if not isinstance(obj, dict):
        raise ScenarioError(f"{where}: expected an object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        msg = f"{where}: unknown keys {unknown}"
        if lax:
            warnings.warn(msg, stacklevel=3)
        else:
            raise ScenarioError(msg)


def _vec(v, n, where):
    try:
        arr = np.asarray(v, float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: not numeric") from exc
    if arr.shape != (n,) or not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{where}: expected {n} finite numbers")
    return arr


def parse_scenario(data: dict, lax: bool = False) -> Scenario:
    _check_keys(data, _TOP_KEYS, "scenario", lax)
    if data.get("version") != 1:
        raise ScenarioError(f"unsupported scenario version {data.get('version')!r}; expected 1")
    for key in ("start", "goal"):
        if key not in data:
            raise ScenarioError(f"missing required field {key!r}")
    start = _vec(data["start"], 2, "start")
    goal = _vec(data["goal"], 2, "goal")

    sys_d = data.get("system", {})
    _check_keys(sys_d, _SYS_KEYS, "system", lax)
    try:
        sys = make_system(
            float(sys_d.get("dt", DEFAULT_DT)),
            int(sys_d.get("steps", DEFAULT_STEPS)),
            float(sys_d.get("noise_x", DEFAULT_NOISE)),
            float(sys_d.get("noise_y", sys_d.get("noise_x", DEFAULT_NOISE))),
        )
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"system: {exc}") from exc

    obstacles = []
    for j, od in enumerate(data.get("obstacles", [])):
        _check_keys(od, _OBS_KEYS, f"obstacles[{j}]", lax)
        try:
            obstacles.append(
                Obstacle(float(od["x"]), float(od["y"]), float(od["radius_mean"]),
                         float(od.get("radius_std", 0.0)))
            )
        except KeyError as exc:
            raise ScenarioError(f"obstacles[{j}]: missing {exc}") from exc
        except ValueError as exc:
            raise ScenarioError(f"obstacles[{j}]: {exc}") from exc

    init_d = data.get("initial", {})
    _check_keys(init_d, _INIT_KEYS, "initial", lax)
    state = _vec(init_d["state"], 6, "initial.state") if "state" in init_d else \
        np.array([start[0], start[1], 0.0, 0.0, 0.0, 0.0])
    if np.max(np.abs(state[:2] - start)) > 1e-12:
        raise ScenarioError("initial.state position must equal start")
    cov = np.asarray(init_d.get("cov", np.zeros((6, 6))), float)
    if cov.shape != (6, 6) or np.max(np.abs(cov - cov.T)) > 1e-12 or np.linalg.eigvalsh(cov).min() < -1e-10:
        raise ScenarioError("initial.cov must be a symmetric PSD 6x6 matrix")

    w_d = data.get("weights", {})
    _check_keys(w_d, _W_KEYS, "weights", lax)
    target = _vec(w_d["target"], 6, "weights.target") if "target" in w_d else \
        np.array([goal[0], goal[1], 0.0, 0.0, 0.0, 0.0])
    terminal = w_d.get("terminal", "soft")
    if terminal not in TERMINAL_MODES:
        raise ScenarioError(f"weights.terminal must be one of {TERMINAL_MODES}")
    try:
        weights = CostWeights(
            _vec(w_d.get("w", DEFAULT_W), 6, "weights.w"), target,
            int(w_d.get("window", sys.T)), terminal,
        )
        weights.window(sys.T)
    except ValueError as exc:
        raise ScenarioError(f"weights: {exc}") from exc

    seeds = []
    for i, sd in enumerate(data.get("seeds", [])):
        _check_keys(sd, _SEED_KEYS, f"seeds[{i}]", lax)
        via = np.asarray(sd.get("via", []), float).reshape(-1, 2)
        seeds.append(SeedSpec(str(sd.get("label", f"seed{i}")), via))
    labels = [s.label for s in seeds]
    if len(set(labels)) != len(labels):
        raise ScenarioError("seed labels must be unique")

    solver = dict(data.get("solver", {}))
    _check_keys(solver, _SOLVER_KEYS, "solver", lax)

    return Scenario(start, goal, tuple(obstacles), sys, weights,
                    StateMoments(state, cov), tuple(seeds), solver, str(data.get("name", "")))


def load_scenario(path, lax: bool = False) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    try:
        return parse_scenario(data, lax=lax)
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise OSError(f"{path}: {exc}") from exc


def _fmt(v) -> str:
    v = float(v)
    if math.isfinite(v):
        return f"{v:.17g}"
    return repr(v)


def export_plan(plan, path, extra: dict | None = None) -> None:
    """Write mean path, positional variances, speed and controls.

    The state table has T+1 rows; the control columns of the last row are blank.
    """
    meta = {
        "strategy": plan.strategy,
        "homotopy_label": plan.homotopy_label,
        "eta": _fmt(plan.eta),
        "k": _fmt(plan.k),
        "tau": _fmt(plan.tau_final),
        "lambda": _fmt(plan.lambda_final),
        "cost_effort": _fmt(plan.cost_effort),
        "cost_state": _fmt(plan.cost_state),
        "cost_variance": _fmt(plan.cost_variance),
        "iterations": str(plan.iterations),
        "converged": str(bool(plan.converged)).lower(),
        "status": plan.status,
    }
    if extra:
        meta.update({k: str(v) for k, v in extra.items()})
    means = plan.moments.means
    pvar = plan.moments.position_variances
    speed = plan.speeds
    lines = [f"# {k}={v}" for k, v in meta.items()]
    lines.append(",".join(PLAN_COLUMNS))
    T = len(plan.controls)
    for t in range(T + 1):
        row = [str(t), _fmt(means[t, 0]), _fmt(means[t, 1]), _fmt(pvar[t, 0]), _fmt(pvar[t, 1]), _fmt(speed[t])]
        row += [_fmt(plan.controls[t, 0]), _fmt(plan.controls[t, 1])] if t < T else ["", ""]
        lines.append(",".join(row))
    atomic_write(path, "\n".join(lines) + "\n")


@dataclass
class PlanFile:
    meta: dict
    table: np.ndarray  # (T+1, 6): mu_x, mu_y, sigma2_x, sigma2_y, speed
    controls: np.ndarray  # (T, 2)

    @property
    def eta(self) -> float:
        return float(self.meta["eta"])


def read_plan(path) -> PlanFile:
    meta, rows = {}, []
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            for line in fh:
                if line.startswith("#"):
                    key, _, val = line[1:].strip().partition("=")
                    meta[key.strip()] = val.strip()
                else:
                    rows.append(line)
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror}") from exc
    reader = csv.reader(rows)
    header = next(reader)
    if header != PLAN_COLUMNS:
        raise ScenarioError(f"{path}: unexpected plan columns {header}")
    table, controls = [], []
    for rec in reader:
        if not rec:
            continue
        table.append([float(v) for v in rec[1:6]])
        if rec[6] != "":
            controls.append([float(rec[6]), float(rec[7])])
    return PlanFile(meta, np.array(table), np.array(controls).reshape(-1, 2))
