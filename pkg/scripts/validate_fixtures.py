#!/usr/bin/env python3
"""Solve every fixture at a few avoidance levels and check each plan by sampling.

Prints one line per plan with the worst per-step avoidance frequency next to
the eta - 3 sigma floor.  Exit status is 1 if any converged plan falls short.

Usage: python3 scripts/validate_fixtures.py [--rollouts N] [--etas 0.8,0.9]
"""

import argparse
import logging
import sys
from pathlib import Path

from ccreach.mc_oracle import binomial_sigma, simulate
from ccreach.scenario import load_scenario
from ccreach.sqp import config_for_scenario, solve

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "ccreach" / "fixtures"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rollouts", type=int, default=100_000)
    ap.add_argument("--etas", default="0.8,0.86,0.9,0.94")
    ap.add_argument("--rng-seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)
    etas = [float(e) for e in args.etas.split(",")]
    short = 0
    for path in sorted(FIXTURES.glob("*.json")):
        sc = load_scenario(path)
        for eta in etas:
            for strategy in ("LV", "HC"):
                for seed in sc.all_seeds():
                    plan = solve(sc, seed, config_for_scenario(sc, strategy, eta))
                    rep = simulate(sc.system, sc.initial, plan.controls, list(sc.obstacles),
                                   args.rollouts, args.rng_seed)
                    floor = eta - 3 * binomial_sigma(eta, args.rollouts)
                    bad = plan.converged and rep.min_per_step() < floor
                    short += bad
                    print(f"{path.stem:16s} eta={eta:.2f} {strategy} {seed.homotopy_label:6s} "
                          f"{plan.status:15s} min={rep.min_per_step():.5f} floor={floor:.5f} "
                          f"joint={rep.joint_avoidance:.5f}{'  SHORT' if bad else ''}")
    return 1 if short else 0


if __name__ == "__main__":
    sys.exit(main())
