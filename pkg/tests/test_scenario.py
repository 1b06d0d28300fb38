import copy
import json

import numpy as np
import pytest

from ccreach.scenario import ScenarioError, export_plan, load_scenario, parse_scenario, read_plan
from ccreach.sqp import SolverConfig, solve

from conftest import FIXTURES

BASE = {
    "version": 1,
    "start": [0.0, 0.0],
    "goal": [0.1, 0.0],
    "obstacles": [{"x": 0.05, "y": 0.0, "radius_mean": 0.01, "radius_std": 0.001}],
    "system": {"dt": 0.05, "steps": 20},
}


def variant(**changes):
    d = copy.deepcopy(BASE)
    d.update(changes)
    return d


def test_defaults():
    sc = parse_scenario(BASE)
    assert sc.system.T == 20 and sc.system.c_x == 0.15
    np.testing.assert_array_equal(sc.weights.target, [0.1, 0, 0, 0, 0, 0])
    assert sc.weights.cost_window == 20 and sc.weights.terminal == "soft"
    np.testing.assert_array_equal(sc.initial.cov, 0)
    assert sc.seed().homotopy_label == "straight"


@pytest.mark.parametrize("name", ["single_obstacle", "gauntlet", "two_homotopy"])
def test_fixtures_load_and_block_the_straight_line(name):
    sc = load_scenario(FIXTURES / f"{name}.json")
    line = np.linspace(sc.start, sc.goal, 201)
    hit = any(np.min(np.hypot(*(line - o.center).T)) < o.mu_R for o in sc.obstacles)
    assert hit


@pytest.mark.parametrize(
    "bad",
    [
        variant(version=2),
        variant(goal=[0.0, 0.0]),
        variant(goal=[0.05, 0.005]),
        variant(obstacles=[{"x": 0, "y": 0, "radius_mean": 0.01}]),
        variant(obstacles=[{"x": 0.05, "y": 0, "radius_mean": 0.01, "radius_std": 0.01}]),
        variant(obstacles=[{"x": 0.05, "y": 0, "radius_mean": -0.01}]),
        variant(system={"dt": -0.1, "steps": 20}),
        variant(weights={"window": 50}),
        variant(weights={"w": [1, 2, 3]}),
        variant(weights={"terminal": "sometimes"}),
        variant(seeds=[{"label": "a"}, {"label": "a"}]),
        variant(initial={"state": [0.1, 0, 0, 0, 0, 0]}),
        variant(colour="blue"),
        variant(system={"dt": 0.05, "steps": 20, "noize_x": 0.1}),
    ],
)
def test_strict_parser_rejects(bad):
    with pytest.raises(ScenarioError):
        parse_scenario(bad)


def test_lax_parse_ignores_unknown_keys():
    with pytest.warns(UserWarning, match="colour"):
        sc = parse_scenario(variant(colour="blue"), lax=True)
    assert len(sc.obstacles) == 1


def test_json_errors_report_position(tmp_path):
    p = tmp_path / "s.json"
    p.write_text('{"version": 1,\n "start": [0, 0],,\n}')
    with pytest.raises(ScenarioError, match="line 2"):
        load_scenario(p)


def test_unknown_seed_label():
    with pytest.raises(ScenarioError):
        parse_scenario(BASE).seed("nope")


def test_plan_roundtrip(tmp_path, simple_scenario):
    plan = solve(simple_scenario, simple_scenario.seed(), SolverConfig(eta=0.8, lambda0=1e3))
    path = tmp_path / "plan.csv"
    export_plan(plan, path)
    back = read_plan(path)
    assert np.array_equal(back.controls, plan.controls)
    assert back.eta == 0.8
    assert back.meta["status"] == plan.status
    np.testing.assert_array_equal(back.table[:, :2], plan.mean_positions)
    text = path.read_text()
    assert "e+" not in text.split("\n")[0]  # metadata lines are plain key=value
    assert all("," not in line for line in text.splitlines() if line.startswith("#"))


def test_numbers_do_not_depend_on_locale(tmp_path, simple_scenario):
    import locale

    plan = solve(simple_scenario, simple_scenario.seed(), SolverConfig(eta=0.8, max_iter=2))
    a = tmp_path / "a.csv"
    export_plan(plan, a)
    old = locale.setlocale(locale.LC_NUMERIC)
    try:
        for name in ("de_DE.UTF-8", "fr_FR.UTF-8"):
            try:
                locale.setlocale(locale.LC_NUMERIC, name)
                break
            except locale.Error:
                continue
        b = tmp_path / "b.csv"
        export_plan(plan, b)
    finally:
        locale.setlocale(locale.LC_NUMERIC, old)
    assert a.read_bytes() == b.read_bytes()


def test_with_noise_rebuilds_system():
    sc = parse_scenario(BASE).with_noise(0.05)
    assert sc.system.c_x == sc.system.c_y == 0.05


def test_fixture_files_are_valid_json():
    for p in FIXTURES.glob("*.json"):
        assert json.loads(p.read_text())["version"] == 1
