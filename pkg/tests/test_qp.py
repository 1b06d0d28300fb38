import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ccreach.chance import Obstacle, linearize
from ccreach.dynamics import StateMoments, control_to_moment_maps, make_system
from ccreach.qp import (
    ConstraintSpec,
    CostWeights,
    QPProblem,
    assemble_qp,
    kkt_residuals,
    solve_qp,
)


def brute_force_qp(H, f, G, h, tol=1e-9):
    """Independent oracle: KKT solve for every active subset, keep feasible points with lam >= 0."""
    n, m = len(f), len(h)
    best = None
    for r in range(m + 1):
        for S in itertools.combinations(range(m), r):
            S = list(S)
            K = np.block([[H, G[S].T], [G[S], np.zeros((len(S), len(S)))]])
            rhs = np.concatenate([-f, h[S]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.any(G @ x - h > tol) or np.any(lam < -tol):
                continue
            val = 0.5 * x @ H @ x + f @ x
            if best is None or val < best[1] - 1e-12:
                best = (x, val)
    return best


def random_qp(rng):
    n = int(rng.integers(1, 9))
    m = int(rng.integers(1, 7))
    L = rng.normal(size=(n, n))
    H = L @ L.T + 0.1 * np.eye(n)
    f = rng.normal(size=n)
    G = rng.normal(size=(m, n))
    h = rng.normal(size=m)
    return H, f, G, h


def test_projection_example():
    sol = solve_qp(QPProblem(2 * np.eye(1), np.zeros(1), [[-1.0]], [-1.0]))
    assert sol.status == "optimal"
    assert sol.u_star[0] == pytest.approx(1.0, abs=1e-10)
    assert sol.objective == pytest.approx(1.0, abs=1e-10)


def test_unconstrained_example():
    sol = solve_qp(QPProblem(2 * np.eye(5), -2 * np.ones(5), np.zeros((0, 5)), np.zeros(0)))
    np.testing.assert_allclose(sol.u_star, 1.0, atol=1e-12)


def test_against_exhaustive_active_set_enumeration():
    rng = np.random.default_rng(99)
    feasible = 0
    for _ in range(100):
        H, f, G, h = random_qp(rng)
        sol = solve_qp(QPProblem(H, f, G, h))
        ref = brute_force_qp(H, f, G, h)
        if ref is None:
            assert sol.status == "infeasible"
            continue
        feasible += 1
        assert sol.status == "optimal"
        np.testing.assert_allclose(sol.u_star, ref[0], atol=1e-6)
        assert sol.objective == pytest.approx(ref[1], abs=1e-6)
    assert feasible > 50


def test_kkt_contract_on_random_problems():
    rng = np.random.default_rng(5)
    for _ in range(50):
        H, f, G, h = random_qp(rng)
        sol = solve_qp(QPProblem(H, f, G, h))
        if sol.status != "optimal":
            continue
        stat, primal, comp = sol.kkt_residuals
        assert primal <= 1e-6
        assert stat <= 1e-6 * (1 + np.linalg.norm(f))
        assert comp <= 1e-8
        assert np.all(sol.multipliers >= 0)
        assert kkt_residuals(QPProblem(H, f, G, h), sol.u_star, sol.multipliers, sol.eq_multipliers)[0] <= 1e-6


def test_infeasible_certificate():
    # u <= -1 and u >= 1
    p = QPProblem(np.eye(1), np.zeros(1), [[1.0], [-1.0]], [-1.0, -1.0])
    sol = solve_qp(p)
    assert sol.status == "infeasible"
    cert = sol.certificate
    y = np.zeros(2)
    for i, w in cert["rows"].items():
        y[i] = w
    assert np.all(y >= 0)
    np.testing.assert_allclose(y @ p.G, 0, atol=1e-10)
    assert y @ p.h < 0


def test_equality_constraints():
    rng = np.random.default_rng(8)
    H = np.diag(rng.uniform(1, 3, 4))
    f = rng.normal(size=4)
    A = rng.normal(size=(2, 4))
    b = rng.normal(size=2)
    sol = solve_qp(QPProblem(H, f, np.zeros((0, 4)), np.zeros(0), A, b))
    K = np.block([[H, A.T], [A, np.zeros((2, 2))]])
    ref = np.linalg.solve(K, np.concatenate([-f, b]))[:4]
    np.testing.assert_allclose(sol.u_star, ref, atol=1e-10)


def test_deterministic_solutions(rng):
    H, f, G, h = random_qp(rng)
    a, b = solve_qp(QPProblem(H, f, G, h)), solve_qp(QPProblem(H, f, G, h))
    assert np.array_equal(a.u_star, b.u_star)


def assembly_setup(c=0.15, T=8):
    sys = make_system(0.1, T, c, c)
    x0 = StateMoments.at_rest(0.0, 0.0)
    weights = CostWeights(np.array([10, 10, 1, 1, 0.1, 0.1]), np.array([1.0, 0, 0, 0, 0, 0]), 2)
    obs = Obstacle(0.5, -0.05, 0.1, 0.01)
    lins = [ConstraintSpec(0, t, linearize(obs, t / T, 0.0)) for t in range(1, T + 1)]
    return sys, x0, weights, lins


def test_no_obstacles_pure_effort_is_zero():
    sys = make_system(0.1, 6)
    x0 = StateMoments.at_rest(0, 0)
    w = CostWeights(np.zeros(6), np.zeros(6), 6)
    p = assemble_qp(sys, x0, w, [], 0.0, 0.0)
    sol = solve_qp(p)
    np.testing.assert_allclose(sol.u_star, 0, atol=1e-14)
    assert sol.objective == pytest.approx(0.0, abs=1e-14)


def test_deterministic_system_has_no_variance_in_h():
    sys, x0, w, lins = assembly_setup(c=0.0)
    maps = control_to_moment_maps(sys, x0)
    p0 = assemble_qp(sys, x0, w, lins, 0.0, 0.0)
    p1 = assemble_qp(sys, x0, w, lins, 0.0, 1e6)
    np.testing.assert_array_equal(p0.H, p1.H)
    expected = 2 * np.eye(2 * sys.T)
    for t in w.window(sys.T):
        M = maps.mean_gain[t]
        expected += 2 * M.T @ (M * w.w[:, None])
    np.testing.assert_allclose(p0.H, expected, atol=1e-12)


def test_doubling_lambda_doubles_variance_block():
    sys, x0, w, lins = assembly_setup()
    base = assemble_qp(sys, x0, w, lins, 0.0, 0.0).H
    one = assemble_qp(sys, x0, w, lins, 0.0, 3.0).H - base
    two = assemble_qp(sys, x0, w, lins, 0.0, 6.0).H - base
    np.testing.assert_allclose(two, 2 * one, rtol=1e-12, atol=1e-14)


def test_assembled_objective_matches_direct_expectation(rng):
    sys, x0, w, lins = assembly_setup()
    lam = 7.0
    p = assemble_qp(sys, x0, w, lins, 0.0, lam)
    maps = control_to_moment_maps(sys, x0)
    for _ in range(10):
        u = rng.normal(size=2 * sys.T)
        mu, var = maps.means(u), maps.variances(u)
        direct = u @ u
        for t in w.window(sys.T):
            direct += w.w @ ((mu[t] - w.target) ** 2 + var[t])
        direct += lam * var[:, :2].sum()
        assert p.objective(u) == pytest.approx(direct, rel=1e-12)


def test_constraint_rows_encode_expected_c(rng):
    from ccreach.chance import expected_c

    sys, x0, w, lins = assembly_setup()
    tau = 1e-3
    p = assemble_qp(sys, x0, w, lins, tau, 0.0)
    maps = control_to_moment_maps(sys, x0)
    u = rng.normal(size=2 * sys.T)
    mu = maps.means(u)
    for row, spec in enumerate(lins):
        lhs = p.G[row] @ u - p.h[row]
        assert lhs == pytest.approx(expected_c(spec.lin, mu[spec.t, 0], mu[spec.t, 1]) + tau, abs=1e-12)
    assert p.tags == [(0, t) for t in range(1, sys.T + 1)]


def test_bad_timestep_rejected():
    sys, x0, w, lins = assembly_setup()
    with pytest.raises(ValueError):
        assemble_qp(sys, x0, w, [ConstraintSpec(0, 0, lins[0].lin)], 0.0, 0.0)
    with pytest.raises(ValueError):
        assemble_qp(sys, x0, w, lins, -1.0, 0.0)


@given(lam=st.floats(0, 1e8), c=st.floats(0, 0.5))
def test_assembled_hessian_is_convex(lam, c):
    sys, x0, w, lins = assembly_setup(c=c, T=5)
    H = assemble_qp(sys, x0, w, lins, 0.0, lam).H
    assert np.allclose(H, H.T)
    assert np.linalg.eigvalsh(H).min() >= -1e-8


def test_objective_monotone_in_tau_and_lambda():
    sys, x0, w, lins = assembly_setup()
    taus = [0.0, 1e-3, 2e-3, 3e-3, 4e-3]
    objs = [solve_qp(assemble_qp(sys, x0, w, lins, t, 1.0)).objective for t in taus]
    assert all(b >= a - 1e-9 for a, b in zip(objs, objs[1:]))
    maps = control_to_moment_maps(sys, x0)
    lams = [0.0, 1.0, 10.0, 100.0, 1000.0]
    sols = [solve_qp(assemble_qp(sys, x0, w, lins, 1e-3, l)) for l in lams]
    objs = [s.objective for s in sols]
    var = [maps.variances(s.u_star)[:, :2].sum() for s in sols]
    assert all(b >= a - 1e-9 for a, b in zip(objs, objs[1:]))
    assert all(b <= a + 1e-15 for a, b in zip(var, var[1:]))


def test_terminal_equality_modes():
    sys = make_system(0.1, 10)
    x0 = StateMoments.at_rest(0, 0)
    target = np.array([0.3, 0.1, 0, 0, 0, 0])
    for mode, comps in [("position", [0, 1]), ("state", range(6))]:
        w = CostWeights(np.zeros(6), target, 1, terminal=mode)
        sol = solve_qp(assemble_qp(sys, x0, w, [], 0.0, 0.0))
        end = control_to_moment_maps(sys, x0).means(sol.u_star)[-1]
        np.testing.assert_allclose(end[list(comps)], target[list(comps)], atol=1e-10)


def test_debug_dump_roundtrip(tmp_path):
    sys, x0, w, lins = assembly_setup()
    from ccreach.qp import dump_qp_csv

    p = assemble_qp(sys, x0, w, lins, 1e-3, 2.0)
    files = dump_qp_csv(p, tmp_path)
    assert {f.name for f in files} == {"H.csv", "f.csv", "G.csv", "h.csv"}
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "H.csv", delimiter=","), p.H)
    G = np.loadtxt(tmp_path / "G.csv", delimiter=",")
    np.testing.assert_array_equal(G[:, 2:], p.G)
    assert [tuple(r) for r in G[:, :2].astype(int)] == p.tags
