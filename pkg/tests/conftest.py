import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from ccreach.scenario import parse_scenario

settings.register_profile("ci", max_examples=50, deadline=None)
settings.load_profile("ci")

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "ccreach" / "fixtures"


def load_fixture(name):
    return parse_scenario(json.loads((FIXTURES / f"{name}.json").read_text()))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def simple_scenario():
    return parse_scenario(
        {
            "version": 1,
            "start": [0.0, 0.0],
            "goal": [0.1, 0.0],
            "obstacles": [{"x": 0.05, "y": -0.01, "radius_mean": 0.015, "radius_std": 0.0005}],
            "system": {"dt": 0.05, "steps": 20, "noise_x": 0.15, "noise_y": 0.15},
            "weights": {"w": [0, 0, 0, 0, 0, 0], "window": 1, "terminal": "state"},
            "seeds": [{"label": "above", "via": [[0.05, 0.012]]}],
        }
    )
