#!/usr/bin/env python3
"""Detection probability versus the average-power budget.

Re-optimizes the power map at each budget, calibrates the fusion threshold to
the false-alarm target on a held-out stream, and measures detection by Monte
Carlo. Produces the saturation picture: past the budget where the price hits
zero the map freezes and the curve flattens.

    python3 scripts/budget_sweep.py --scenario scenarios/two_sensor.scn \
        --out sweep.csv --values 1,2,5,10,20,40,70,95,105
"""

import argparse
import sys

from ehdetect.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scenario", default="scenarios/two_sensor.scn")
    parser.add_argument("--out", default="budget_sweep.csv")
    parser.add_argument("--values", default="1,2,5,10,20,40,70,95,105")
    parser.add_argument("--samples", type=int, default=100_000)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()
    return cli_main([
        "sweep",
        "--scenario", args.scenario,
        "--out", args.out,
        "--variable", "power_budget",
        "--values", args.values,
        "--samples", str(args.samples),
        "--seed", str(args.seed),
    ])


if __name__ == "__main__":
    sys.exit(main())
