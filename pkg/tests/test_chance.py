import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ccreach.chance import (
    DegeneratePointError,
    Obstacle,
    eta_to_k,
    eval_collision,
    expected_c,
    expected_c_coeffs,
    k_to_eta,
    linearize,
    surrogate_margin,
    variance_c,
)

OBS = Obstacle(1.0, 0.0, 0.5, 0.1)


def test_eval_collision_examples():
    o = Obstacle(1.0, 0.0, 0.5)
    assert eval_collision(0, 0, o, 0.5) == pytest.approx(-0.75)
    assert eval_collision(1, 0, o, 0.5) == pytest.approx(0.25)
    assert eval_collision(1.5, 0, o, 0.5) == pytest.approx(0.0)


@pytest.mark.parametrize(
    "kwargs", [dict(mu_R=0.0), dict(mu_R=-1.0), dict(mu_R=0.3, sigma_R=0.2), dict(mu_R=0.3, sigma_R=-0.01)]
)
def test_obstacle_validation(kwargs):
    with pytest.raises(ValueError):
        Obstacle(0.0, 0.0, **kwargs)


def test_linearize_example():
    lin = linearize(Obstacle(1.0, 0.0, 0.5), 0.0, 0.0)
    assert (lin.a_x, lin.a_y) == (2.0, 0.0)
    assert lin.b == pytest.approx(-0.75)


def test_linearize_on_boundary_is_zero_at_reference():
    o = Obstacle(1.0, 2.0, 0.5)
    th = 0.7
    x, y = 1.0 + 0.5 * math.cos(th), 2.0 + 0.5 * math.sin(th)
    lin = linearize(o, x, y)
    assert lin.value(x, y) == pytest.approx(0.0, abs=1e-15)


def test_linearize_rejects_center():
    with pytest.raises(DegeneratePointError):
        linearize(OBS, 1.0, 0.0)


def test_affine_dominates_at_random_points(rng):
    lin = linearize(OBS, 0.0, 0.0)
    pts = rng.uniform(-5, 5, size=(1000, 2))
    assert np.all(lin.value(pts[:, 0], pts[:, 1]) >= eval_collision(pts[:, 0], pts[:, 1], OBS) - 1e-12)


@given(
    cx=st.floats(-2, 2), cy=st.floats(-2, 2), R=st.floats(0.01, 1.0),
    rx=st.floats(-3, 3), ry=st.floats(-3, 3), x=st.floats(-5, 5), y=st.floats(-5, 5),
)
def test_affine_upper_bound_property(cx, cy, R, rx, ry, x, y):
    o = Obstacle(cx, cy, R)
    if math.hypot(rx - cx, ry - cy) <= 1e-6:
        return
    lin = linearize(o, rx, ry)
    assert lin.a_x == -2 * (rx - cx) and lin.a_y == -2 * (ry - cy)
    assert lin.value(x, y) >= eval_collision(x, y, o) - 1e-12 * (1 + abs(lin.value(x, y)))


def test_expected_c_at_reference_without_radius_noise():
    o = Obstacle(1.0, 0.3, 0.5, 0.0)
    lin = linearize(o, 0.2, -0.1)
    assert expected_c(lin, 0.2, -0.1) == pytest.approx(eval_collision(0.2, -0.1, o), abs=1e-15)


def test_expected_c_worked_value_and_sampling():
    lin = linearize(OBS, 0.0, 0.0)
    assert expected_c(lin, 0.0, 0.0) == pytest.approx(-0.74, abs=1e-15)
    R = np.random.default_rng(3).normal(0.5, 0.1, 1_000_000)
    vals = lin.value(0.0, 0.0, R)
    se = vals.std() / math.sqrt(len(vals))
    assert abs(vals.mean() - (-0.74)) < 3 * se


def test_expected_c_shift_toward_obstacle():
    lin = linearize(OBS, 0.0, 0.0)
    h = 1.0
    assert expected_c(lin, h, 0.0) - expected_c(lin, 0.0, 0.0) == pytest.approx(2 * OBS.mu_x - 2 * lin.ref_x)
    assert expected_c(lin, h, 0.0) - expected_c(lin, 0.0, 0.0) == pytest.approx(2.0)


def test_expected_c_coefficients_match_closed_form(rng):
    for _ in range(50):
        o = Obstacle(*rng.uniform(-1, 1, 2), 0.3, 0.05)
        lin = linearize(o, *rng.uniform(-2, 2, 2))
        mx, my = rng.uniform(-2, 2, 2)
        ax, ay, c = expected_c_coeffs(lin)
        assert ax * mx + ay * my + c == pytest.approx(expected_c(lin, mx, my), abs=1e-12)


def test_variance_c_examples():
    lin = linearize(OBS, 0.0, 0.0)
    assert variance_c(linearize(Obstacle(1.0, 0.0, 0.5), 0, 0), 0.0, 0.0) == 0.0
    assert variance_c(lin, 0.0, 0.0) == pytest.approx(0.0102, rel=1e-12)
    assert variance_c(lin, 0.01, 0.0) == pytest.approx(0.0502, rel=1e-12)


def test_variance_c_matches_joint_sampling():
    lin = linearize(OBS, 0.0, 0.0)
    g = np.random.default_rng(11)
    n = 1_000_000
    x = 0.1 * g.standard_normal(n)
    R = g.normal(0.5, 0.1, n)
    vals = lin.value(x, 0.0, R)
    d = vals - vals.mean()
    var = d @ d / (n - 1)
    se = math.sqrt((np.mean(d**4) - var**2) / n)
    assert abs(var - 0.0502) < 3 * se


def test_variance_c_rejects_negative_inputs():
    with pytest.raises(ValueError):
        variance_c(linearize(OBS, 0, 0), -1e-3, 0.0)


@given(
    s2x=st.floats(0, 1), s2y=st.floats(0, 1), dx=st.floats(0, 1), dy=st.floats(0, 1),
    sR=st.floats(0, 0.1), dsR=st.floats(0, 0.06),
)
def test_variance_c_monotone(s2x, s2y, dx, dy, sR, dsR):
    lin = linearize(Obstacle(1.0, 0.5, 0.5, sR), 0.1, -0.2)
    base = variance_c(lin, s2x, s2y)
    assert variance_c(lin, s2x + dx, s2y) >= base
    assert variance_c(lin, s2x, s2y + dy) >= base
    lin2 = linearize(Obstacle(1.0, 0.5, 0.5, min(sR + dsR, 0.5 / 3)), 0.1, -0.2)
    assert variance_c(lin2, s2x, s2y) >= base
    assert base >= 0


def test_surrogate_margin_examples():
    assert surrogate_margin(-1.0, 0.0, 3.0) == -1.0
    assert surrogate_margin(-1.0, 0.25, 2.0) == 0.0
    assert surrogate_margin(-0.3, 0.7, 0.0) == -0.3


def test_eta_k_mapping():
    assert eta_to_k(0.5) == pytest.approx(1.0)
    assert eta_to_k(0.8) == pytest.approx(2.0)
    assert eta_to_k(0.94) == pytest.approx(3.9581, abs=1e-4)
    assert eta_to_k(0.0) == 0.0
    with pytest.raises(ValueError):
        eta_to_k(1.0)
    with pytest.raises(ValueError):
        k_to_eta(-0.1)


@given(st.floats(0, 0.999999))
def test_eta_k_roundtrip(eta):
    assert k_to_eta(eta_to_k(eta)) == pytest.approx(eta, abs=1e-12)


def test_surrogate_soundness_by_sampling():
    g = np.random.default_rng(2024)
    n = 1_000_000
    checked = 0
    while checked < 50:
        o = Obstacle(0.0, 0.0, g.uniform(0.2, 1.0), 0.0)
        o = Obstacle(0.0, 0.0, o.mu_R, g.uniform(0, o.mu_R / 3))
        ang = g.uniform(0, 2 * np.pi)
        ref = (o.mu_R + g.uniform(0.05, 1.5)) * np.array([np.cos(ang), np.sin(ang)])
        lin = linearize(o, *ref)
        mu = ref + g.normal(scale=0.1, size=2)
        s2 = g.uniform(0, 0.05, 2)
        k = g.uniform(0.5, 4)
        m = surrogate_margin(expected_c(lin, *mu), variance_c(lin, *s2), k)
        if m > 0:
            continue
        x = mu[0] + math.sqrt(s2[0]) * g.standard_normal(n)
        y = mu[1] + math.sqrt(s2[1]) * g.standard_normal(n)
        R = np.maximum(g.normal(o.mu_R, o.sigma_R, n), 0)
        c_lin = lin.value(x, y, R)
        c_true = eval_collision(x, y, o, R)
        p_lin = np.mean(c_lin <= 0)
        assert p_lin >= k_to_eta(k)
        assert np.mean(c_true <= 0) >= p_lin
        checked += 1
