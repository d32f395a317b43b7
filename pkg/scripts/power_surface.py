#!/usr/bin/env python3
"""Classical power over a (C, d) grid for an under-dispersed multiplicative-binomial generator."""

import argparse
import json
from pathlib import Path

from sexalloc.analysis import jsonable
from sexalloc.simulation import DEFAULT_C_GRID, DEFAULT_D_GRID, POWER_BASE, classical_power_surface


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--test", choices=["meelis", "james"], default="meelis")
    ap.add_argument("--C", type=int, nargs="+", default=list(DEFAULT_C_GRID))
    ap.add_argument("--d", type=float, nargs="+", default=list(DEFAULT_D_GRID))
    ap.add_argument("--reps", type=int, default=10_000)
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--outdir", type=Path, default=Path("results/power"))
    args = ap.parse_args()

    surface = classical_power_surface(args.C, args.d, dict(POWER_BASE), args.reps, args.test, args.alpha, args.seed)
    args.outdir.mkdir(parents=True, exist_ok=True)
    surface.to_csv(args.outdir / f"{args.test}.csv")
    (args.outdir / f"{args.test}.json").write_text(json.dumps(jsonable(surface.to_dict()), indent=2) + "\n")

    print("C \\ d " + " ".join(f"{d:6.2f}" for d in surface.d_values))
    for C, row in zip(surface.C_values, surface.power):
        print(f"{C:6d} " + " ".join(f"{x:6.3f}" for x in row))


if __name__ == "__main__":
    main()
