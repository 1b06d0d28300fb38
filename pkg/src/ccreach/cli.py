"""Command-line front end: ``ccreach solve | sweep | validate | seed``.

Exit codes
----------
0  success (plan converged / sweep fully converged / validation passed)
1  usage or input error (bad flags, unreadable or invalid scenario/plan)
2  solver stopped without converging (for ``sweep``: at least one cell)
3  a convex subproblem was infeasible
4  Monte Carlo validation found a step below eta - 3 sigma

Output files
------------
``solve --out plan.csv``
    ``# key=value`` metadata lines, then columns
    ``t, mu_x, mu_y, sigma2_x, sigma2_y, speed, u_x, u_y`` with T+1 rows
    (the control cells of the final row are empty).
``sweep --out report.csv``
    ``# mc_rollouts=N`` then one row per (eta, strategy, seed) cell with
    columns ``eta, strategy, homotopy_label, J_U, J_total, min_clearance,
    time_of_peak_speed, mc_per_step_min, converged, status, iterations, tau, lam``.
    ``--plot-dir DIR`` adds whitespace-separated two-column files:
    ``J_U_<strategy>_<label>.dat`` (eta vs J_U) and, when both LV and HC
    were run, ``ratio_LV_over_HC_<label>.dat``; with two or more seeds,
    ``ratio_<A>_over_<B>_<strategy>.dat`` for the first two seeds.
``solve --dump-qp DIR``
    ``H.csv``, ``f.csv``, ``G.csv`` (two leading tag columns: obstacle, t),
    ``h.csv`` and, with a hard terminal condition, ``A_eq.csv``/``b_eq.csv``:
    the subproblem re-assembled at the returned mean path.
``validate --out mc.csv``
    ``# n_rollouts, seed, joint_avoidance`` lines, then ``t, obstacle_0, ...``
    with the empirical avoidance frequency per step and obstacle.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from ccreach.harness import SweepSpec, run_sweep
from ccreach.mc_oracle import binomial_sigma, simulate
from ccreach.scenario import ScenarioError, export_plan, load_scenario, read_plan
from ccreach.qp import assemble_qp, dump_qp_csv
from ccreach.sqp import _linearize_all, config_for_scenario, solve

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED, EXIT_INFEASIBLE, EXIT_VALIDATION = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_flags(parser, suppress: bool):
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    parser.add_argument("--max-iter", type=int, help="SQP iteration cap", **kw)
    parser.add_argument("--xi", type=float, help="convergence threshold on |dJ|", **kw)
    parser.add_argument("--lax-parse", action="store_true", help="ignore unknown scenario keys", **kw)
    parser.add_argument("--quiet", action="store_true", help="only errors on stderr, no summary", **kw)


def _probability(text: str) -> float:
    v = float(text)
    if not 0 <= v < 1:
        raise argparse.ArgumentTypeError(f"{text} is not a probability in [0, 1)")
    return v


def _eta_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse eta list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="ccreach", description="Chance-constrained reaching trajectory planner.")
    _global_flags(top, suppress=False)
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="plan one trajectory")
    _global_flags(p, suppress=True)
    p.add_argument("scenario")
    p.add_argument("--eta", type=_probability, required=True)
    p.add_argument("--strategy", type=str.lower, choices=["lv", "hc", "custom"], required=True)
    p.add_argument("--delta", type=float, help="tau increment (custom strategy)")
    p.add_argument("--Delta", type=float, help="lambda multiplier (custom strategy)")
    p.add_argument("--seed-label", help="homotopy seed to start from")
    p.add_argument("--noise", type=float, help="override both noise fractions")
    p.add_argument("--dump-qp", metavar="DIR", help="write the final subproblem (H, f, G, h) as CSV")
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="solve an eta x strategy x seed grid")
    _global_flags(p, suppress=True)
    p.add_argument("scenario")
    p.add_argument("--etas", type=_eta_list, required=True)
    p.add_argument("--strategies", default="lv,hc")
    p.add_argument("--seed-labels", help="comma-separated subset of seeds (default: all)")
    p.add_argument("--noise", type=float, help="override both noise fractions")
    p.add_argument("--rollouts", type=int, default=100_000, help="Monte Carlo rollouts per cell (0 skips)")
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--plot-dir", help="also write plot-ready x/y files here")
    p.add_argument("--out", required=True)

    p = sub.add_parser("validate", help="Monte Carlo check of a plan")
    _global_flags(p, suppress=True)
    p.add_argument("scenario")
    p.add_argument("plan")
    p.add_argument("--rollouts", type=int, default=100_000)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--eta", type=_probability, help="override the level recorded in the plan")
    p.add_argument("--noise", type=float, help="override both noise fractions")
    p.add_argument("--out", required=True)

    p = sub.add_parser("seed", help="inspect homotopy seeds")
    _global_flags(p, suppress=True)
    p.add_argument("scenario")
    p.add_argument("--list", action="store_true", required=True)
    return top


def _scenario(args):
    sc = load_scenario(args.scenario, lax=getattr(args, "lax_parse", False))
    if getattr(args, "noise", None) is not None:
        if args.noise < 0:
            raise ScenarioError("--noise must be non-negative")
        sc = sc.with_noise(args.noise)
    return sc


def _overrides(args) -> dict:
    return {"max_iter": getattr(args, "max_iter", None), "xi": getattr(args, "xi", None)}


def _say(args, msg):
    if not getattr(args, "quiet", False):
        print(msg)


def cmd_solve(args) -> int:
    sc = _scenario(args)
    extra = {}
    if args.strategy == "custom":
        if args.delta is None or args.Delta is None:
            raise ScenarioError("--strategy custom needs --delta and --Delta")
        extra = {"delta": args.delta, "Delta": args.Delta}
    elif args.delta is not None or args.Delta is not None:
        raise ScenarioError("--delta/--Delta only apply to --strategy custom")
    cfg = config_for_scenario(sc, args.strategy, args.eta, **_overrides(args), **extra)
    plan = solve(sc, sc.seed(args.seed_label), cfg)
    export_plan(plan, args.out)
    if args.dump_qp:
        lins = _linearize_all(list(sc.obstacles), plan.mean_positions, sc.system.T)
        dump_qp_csv(assemble_qp(sc.system, sc.initial, sc.weights, lins, plan.tau_final,
                                plan.lambda_final), args.dump_qp)
    _say(args, f"{plan.status}: J_U={plan.cost_effort:.6g} tau={plan.tau_final:.3g} "
               f"lambda={plan.lambda_final:.3g} iterations={plan.iterations} -> {args.out}")
    if plan.status == "infeasible":
        logging.getLogger("ccreach").error(plan.message)
        return EXIT_INFEASIBLE
    return EXIT_OK if plan.converged else EXIT_NOT_CONVERGED


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    strategies = [s.strip().upper() for s in args.strategies.split(",") if s.strip()]
    seeds = None
    if args.seed_labels:
        seeds = [sc.seed(lbl.strip()) for lbl in args.seed_labels.split(",") if lbl.strip()]
    spec = SweepSpec(sc, args.etas, strategies, seeds, args.rollouts, args.rng_seed, _overrides(args))
    report = run_sweep(spec)
    report.to_csv(args.out)
    if args.plot_dir:
        labels = [s.homotopy_label for s in spec.seed_list()]
        ratios = {}
        if {"LV", "HC"} <= set(spec.strategies):
            for lbl in labels:
                ratios[f"LV_over_HC_{lbl}"] = ({"strategy": "LV", "homotopy_label": lbl},
                                               {"strategy": "HC", "homotopy_label": lbl})
        if len(labels) >= 2:
            a, b = labels[:2]
            for s in spec.strategies:
                ratios[f"{a}_over_{b}_{s}"] = ({"strategy": s, "homotopy_label": a},
                                              {"strategy": s, "homotopy_label": b})
        report.export_plot_data(args.plot_dir, ratios)
    n_ok = sum(r.converged for r in report.rows)
    _say(args, f"{n_ok}/{len(report.rows)} cells converged -> {args.out}")
    return EXIT_OK if n_ok == len(report.rows) else EXIT_NOT_CONVERGED


def cmd_validate(args) -> int:
    sc = _scenario(args)
    plan = read_plan(args.plan)
    if plan.controls.shape != (sc.system.T, 2):
        raise ScenarioError(f"plan has {len(plan.controls)} control rows, scenario needs {sc.system.T}")
    eta = args.eta if args.eta is not None else plan.eta
    if not np.isfinite(eta):
        raise ScenarioError("plan carries no eta; pass --eta")
    if args.rollouts < 1:
        raise ScenarioError("--rollouts must be positive")
    rep = simulate(sc.system, sc.initial, plan.controls, list(sc.obstacles), args.rollouts, args.rng_seed)
    rep.to_csv(args.out)
    bad = rep.violations(eta)
    floor = eta - 3 * binomial_sigma(eta, args.rollouts)
    _say(args, f"min per-step avoidance {rep.min_per_step():.6f} (floor {floor:.6f}), "
               f"joint {rep.joint_avoidance:.6f} -> {args.out}")
    if bad:
        for j, t, rate in bad[:10]:
            logging.getLogger("ccreach").error("obstacle %d step %d: avoidance %.6f < %.6f", j, t, rate, floor)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_seed(args) -> int:
    sc = _scenario(args)
    if not sc.seeds:
        print("straight\t(no via points)")
    for s in sc.seeds:
        pts = " ".join(f"({x:g},{y:g})" for x, y in s.via)
        print(f"{s.label}\t{pts}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "validate": cmd_validate, "seed": cmd_seed}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if getattr(args, "quiet", False) else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"ccreach: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
