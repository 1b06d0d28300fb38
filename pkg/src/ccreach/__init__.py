"""Chance-constrained reaching trajectories under signal-dependent noise."""

from ccreach.chance import (
    AffineConstraint,
    Obstacle,
    eta_to_k,
    eval_collision,
    expected_c,
    k_to_eta,
    linearize,
    surrogate_margin,
    variance_c,
)
from ccreach.dynamics import (
    AffineQuadraticMaps,
    MomentTrajectory,
    StateMoments,
    SystemModel,
    control_to_moment_maps,
    make_system,
    propagate_covariance,
    propagate_mean,
    rollout_moments,
)
from ccreach.mc_oracle import MCReport, simulate
from ccreach.qp import CostWeights, QPProblem, QPSolution, assemble_qp, solve_qp
from ccreach.scenario import Scenario, export_plan, load_scenario, read_plan
from ccreach.sqp import (
    PlanResult,
    SeedTrajectory,
    SolverConfig,
    seed_straight,
    seed_via,
    solve,
    solve_homotopies,
    strategy_preset,
)

__version__ = "0.1.0"
