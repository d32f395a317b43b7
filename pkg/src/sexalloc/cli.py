"""Command-line interface: analyze, simulate, power, study.

Exit codes: 0 success, 2 input validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .analysis import ALL_MODELS, RunConfig, analyze_dataset, dumps_report, jsonable
from .data import DatasetError
from .evidence import EvidenceError
from .io import filter_zero_mortality, parse_dataset_csv, write_dataset_csv
from .likelihood import DEFAULT_EPS, PriorConfig
from .mcmc import McmcConfig
from .simulation import (
    DEFAULT_C_GRID,
    DEFAULT_D_GRID,
    POWER_BASE,
    STUDY_BASE,
    GeneratorSpec,
    bayes_vs_meelis_study,
    classical_power_surface,
    simulate_dataset,
    study_priors,
    type1_error_study,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}") from None
    if not (a > 0 and b > 0):
        raise argparse.ArgumentTypeError("prior parameters must be positive")
    return a, b


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _mcmc_args(p: argparse.ArgumentParser, iterations: int, burn_in: int, thin: int, latent_step: int = 1):
    p.add_argument("--iterations", type=int, default=iterations)
    p.add_argument("--burn-in", type=int, default=burn_in)
    p.add_argument("--thin", type=int, default=thin)
    p.add_argument("--latent-step", type=int, default=latent_step, help="latent moves per clutch per sweep")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sexalloc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="classical tests, model fits and Bayes factors for one dataset")
    a.add_argument("data", type=Path, help="CSV file with n,m (secondary) or N,M (primary) columns")
    a.add_argument("--model", choices=[*ALL_MODELS, "all"], default="all")
    a.add_argument("--mode", choices=["primary", "secondary"], default="secondary")
    _mcmc_args(a, 1_000_000, 100_000, 10)
    a.add_argument("--sigma-psi", type=float, default=1.0)
    a.add_argument("--lambda-prior", type=_pair, metavar="SHAPE,RATE")
    a.add_argument("--d-prior", type=_pair, metavar="A,B")
    a.add_argument("--epsilon", type=float, default=DEFAULT_EPS)
    a.add_argument("--predictive-N", type=int, default=10)
    a.add_argument("--zero-mortality-only", action="store_true",
                   help="read n,m,deaths; keep clutches with no deaths and analyse them as primary data")
    a.add_argument("--out", type=Path)

    s = sub.add_parser("simulate", help="draw one synthetic dataset")
    s.add_argument("--C", type=int, required=True)
    s.add_argument("--lambda", dest="lam", type=float, required=True)
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--psi", type=float, default=0.0)
    s.add_argument("--model", choices=ALL_MODELS, default="binomial")
    s.add_argument("--d", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--with-truth", action="store_true", help="append hidden N,M columns")
    s.add_argument("--out", type=Path)

    w = sub.add_parser("power", help="classical power surface over (C, d)")
    w.add_argument("--test", choices=["meelis", "james"], default="meelis")
    w.add_argument("--grid", default="default", help="'default' or 'C=10,50;d=0,0.1'")
    w.add_argument("--reps", type=int, default=10_000)
    w.add_argument("--alpha", type=float, default=0.05)
    w.add_argument("--lambda", dest="lam", type=float, default=POWER_BASE["lam"])
    w.add_argument("--p", type=float, default=POWER_BASE["p"])
    w.add_argument("--psi", type=float, default=POWER_BASE["psi"])
    w.add_argument("--model", choices=ALL_MODELS, default=POWER_BASE["model"])
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--out", type=Path, required=True, help="output prefix; writes PREFIX.csv and PREFIX.json")

    t = sub.add_parser("study", help="Bayes factor vs Meelis study or binomial-truth type-I study")
    t.add_argument("--kind", choices=["comparison", "type1"], default="comparison")
    t.add_argument("--reps", type=int)
    t.add_argument("--C", type=int, default=STUDY_BASE["C"])
    t.add_argument("--d", type=float, default=STUDY_BASE["d"])
    t.add_argument("--psi", type=float, default=STUDY_BASE["psi"])
    _mcmc_args(t, 12_000, 2_000, 1, latent_step=3)
    t.add_argument("--out", type=Path, required=True, help="output prefix; writes PREFIX.csv and PREFIX.json")
    return parser


def _parse_grid(text: str, parser) -> tuple[list[int], list[float]]:
    if text == "default":
        return list(DEFAULT_C_GRID), list(DEFAULT_D_GRID)
    try:
        parts = dict(item.split("=", 1) for item in text.split(";"))
        return [int(c) for c in _floats(parts["C"])], _floats(parts["d"])
    except (KeyError, ValueError):
        parser.error(f"bad --grid {text!r}; expected 'default' or 'C=10,50;d=0,0.1'")


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text + "\n")
    else:
        out.write_text(text + "\n", encoding="utf-8")


def cmd_analyze(args, parser) -> int:
    if args.zero_mortality_only:
        # the file is secondary data with a deaths column; the filtered rows are primary
        dataset = filter_zero_mortality(parse_dataset_csv(args.data, "secondary"))
    else:
        dataset = parse_dataset_csv(args.data, args.mode)
    has_mortality_priors = args.lambda_prior is not None and args.d_prior is not None
    if not dataset.is_primary and not has_mortality_priors:
        parser.error("secondary data need --lambda-prior SHAPE,RATE and --d-prior A,B")
    if dataset.is_primary and (args.lambda_prior or args.d_prior):
        parser.error("--lambda-prior/--d-prior do not apply to primary data")
    lam, dp = args.lambda_prior or (None, None), args.d_prior or (None, None)
    config = RunConfig(
        models=ALL_MODELS if args.model == "all" else (args.model,),
        priors=PriorConfig(sigma_psi=args.sigma_psi, lam_shape=lam[0], lam_rate=lam[1], d_a=dp[0], d_b=dp[1]),
        mcmc=McmcConfig(
            iterations=args.iterations, burn_in=args.burn_in, thin=args.thin, seed=args.seed,
            latent_step=args.latent_step,
        ),
        eps=args.epsilon,
        mode=dataset.mode,
        predictive_N=args.predictive_N,
    )
    _emit(dumps_report(analyze_dataset(dataset, config)), args.out)
    return EXIT_OK


def cmd_simulate(args, parser) -> int:
    spec = GeneratorSpec(C=args.C, lam=args.lam, model=args.model, p=args.p, psi=args.psi, d=args.d, seed=args.seed)
    sim = simulate_dataset(spec)
    truth = sim.primary if args.with_truth else None
    if args.out is None:
        write_dataset_csv(sys.stdout, sim.secondary, truth)
    else:
        write_dataset_csv(args.out, sim.secondary, truth)
    return EXIT_OK


def cmd_power(args, parser) -> int:
    C_values, d_values = _parse_grid(args.grid, parser)
    if args.reps < 100:
        parser.error("--reps must be at least 100")
    surface = classical_power_surface(
        C_values, d_values,
        generator=dict(lam=args.lam, p=args.p, psi=args.psi, model=args.model),
        reps=args.reps, test=args.test, alpha=args.alpha, seed=args.seed,
    )
    surface.to_csv(args.out.with_suffix(".csv"))
    args.out.with_suffix(".json").write_text(json.dumps(jsonable(surface.to_dict()), indent=2) + "\n")
    return EXIT_OK


def cmd_study(args, parser) -> int:
    reps = args.reps or (100 if args.kind == "comparison" else 200)
    if args.kind == "comparison" and reps < 20:
        parser.error("--reps must be at least 20 for the comparison study")
    config = McmcConfig(
        iterations=args.iterations, burn_in=args.burn_in, thin=args.thin, seed=args.seed,
        latent_step=args.latent_step,
    )
    base = {**STUDY_BASE, "C": args.C, "d": args.d, "seed": args.seed}

    def progress(r, res):
        print(f"replicate {r}: meelis_p={res.meelis_p} log_bf={res.log_bf}", file=sys.stderr, flush=True)

    if args.kind == "comparison":
        spec = GeneratorSpec(**{**base, "psi": args.psi})
        summary = bayes_vs_meelis_study(reps, spec, config, study_priors(), progress)
    else:
        spec = GeneratorSpec(**{**base, "model": "binomial", "psi": 0.0})
        summary = type1_error_study(reps, spec, config, study_priors(), progress)
    summary.scatter_csv(args.out.with_suffix(".csv"))
    args.out.with_suffix(".json").write_text(json.dumps(jsonable(summary.to_dict()), indent=2) + "\n")
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "power": cmd_power, "study": cmd_study}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args, parser)
    except (FloatingPointError, EvidenceError, ArithmeticError) as exc:
        code, kind, err = EXIT_NUMERIC, "numerical", exc
    except (DatasetError, ValueError, OSError) as exc:
        code, kind, err = EXIT_INPUT, "input", exc
    json.dump({"error": kind, "type": type(err).__name__, "message": str(err)}, sys.stderr)
    sys.stderr.write("\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
