#!/usr/bin/env python3
"""False-rejection rates of the Meelis test and of P(H0 | D) on binomial-truth data."""

import argparse
import sys
from pathlib import Path

from sexalloc.simulation import STUDY_BASE, GeneratorSpec, study_mcmc_config, type1_error_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--C", type=int, default=STUDY_BASE["C"])
    ap.add_argument("--d", type=float, default=STUDY_BASE["d"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--outdir", type=Path, default=Path("results/type1"))
    args = ap.parse_args()

    spec = GeneratorSpec(**{**STUDY_BASE, "model": "binomial", "psi": 0.0, "C": args.C, "d": args.d,
                            "seed": args.seed})
    summary = type1_error_study(
        args.reps, spec, study_mcmc_config(),
        progress=lambda r, res: print(f"{r:4d} p={res.meelis_p} P(H0|D)={res.prob_null}", file=sys.stderr),
    )
    args.outdir.mkdir(parents=True, exist_ok=True)
    summary.scatter_csv(args.outdir / f"seed{args.seed}.csv")
    summary.to_json(args.outdir / f"seed{args.seed}.json")
    print(f"Meelis rejection at 0.05: {summary.meelis_rejection_rate():.3f}")
    print(f"P(H0|D) <= 0.05:          {summary.bayes_rejection_rate():.3f}")
    print(f"psi interval excludes 0:  {summary.psi_excludes_zero()} / {len(summary.ok)}")


if __name__ == "__main__":
    main()
