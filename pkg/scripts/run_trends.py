#!/usr/bin/env python3
"""Reproduce the strategy and homotopy cost-ratio studies on the shipped fixtures.

Writes sweep reports and plot-ready curves under OUT (default ``results/``):

    gauntlet_c0.15.csv, gauntlet_c0.05.csv   LV vs HC on the two-obstacle gauntlet
    two_homotopy.csv                          H1 vs H2 under each strategy
    plots/...                                 two-column x/y files per curve

Usage: python3 scripts/run_trends.py [OUT] [--rollouts N]
"""

import argparse
import logging
from pathlib import Path

from ccreach.harness import SweepSpec, ratio_curve, run_sweep
from ccreach.scenario import load_scenario

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "ccreach" / "fixtures"
ETAS = [0.80, 0.83, 0.86, 0.89, 0.92, 0.95]


def show(title, curve):
    print(f"{title:28s} " + "  ".join(f"{eta:.2f}:{r:7.3f}" for eta, r in curve))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", nargs="?", default="results")
    ap.add_argument("--rollouts", type=int, default=20_000)
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    gauntlet = load_scenario(FIXTURES / "gauntlet.json")
    lv_hc = {"LV_over_HC": ({"strategy": "LV"}, {"strategy": "HC"})}
    for c in (0.15, 0.05):
        rep = run_sweep(SweepSpec(gauntlet.with_noise(c), ETAS, ("LV", "HC"), mc_rollouts=args.rollouts))
        rep.to_csv(out / f"gauntlet_c{c}.csv")
        rep.export_plot_data(out / "plots" / f"gauntlet_c{c}", lv_hc)
        show(f"gauntlet c={c} LV/HC", ratio_curve(rep, *lv_hc["LV_over_HC"])[0])

    clutter = load_scenario(FIXTURES / "two_homotopy.json")
    rep = run_sweep(SweepSpec(clutter, ETAS, ("LV", "HC"), mc_rollouts=args.rollouts))
    rep.to_csv(out / "two_homotopy.csv")
    ratios = {f"H1_over_H2_{s}": ({"strategy": s, "homotopy_label": "H1"},
                                  {"strategy": s, "homotopy_label": "H2"}) for s in ("LV", "HC")}
    rep.export_plot_data(out / "plots" / "two_homotopy", ratios)
    for name, (num, den) in ratios.items():
        show(f"two-homotopy {name}", ratio_curve(rep, num, den)[0])


if __name__ == "__main__":
    main()
