"""End-to-end analysis: classical tests, model fits, evidence and the JSON report."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .classical import classical_summary
from .data import Dataset
from .distributions import AllocationModel
from .evidence import BayesFactorReport, chib_evidence
from .likelihood import DEFAULT_EPS, PriorConfig
from .mcmc import McmcConfig, posterior_predictive_allocation, run_chain, summarize_posterior
from .streams import stream

SCHEMA_VERSION = "1.0"
ALL_MODELS = ("binomial", "mult", "double")


@dataclass(frozen=True)
class RunConfig:
    models: tuple[str, ...] = ALL_MODELS
    priors: PriorConfig = field(default_factory=PriorConfig)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    eps: float = DEFAULT_EPS
    mode: str = "secondary"
    predictive_N: int = 10
    level: float = 0.95

    def __post_init__(self):
        if not self.models:
            raise ValueError("select at least one model")
        for m in self.models:
            AllocationModel.parse(m)
        if self.predictive_N < 1:
            raise ValueError("predictive N must be positive")
        if not 0 < self.eps < 1:
            raise ValueError("epsilon must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "models": list(self.models),
            "priors": self.priors.to_dict(),
            "mcmc": self.mcmc.to_dict(),
            "eps": self.eps,
            "mode": self.mode,
            "predictive_N": self.predictive_N,
            "level": self.level,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(
            models=tuple(d["models"]),
            priors=PriorConfig(**d["priors"]),
            mcmc=McmcConfig(**d["mcmc"]),
            eps=d["eps"],
            mode=d["mode"],
            predictive_N=d["predictive_N"],
            level=d.get("level", 0.95),
        )


def jsonable(obj):
    """Plain JSON types; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def fit_model(dataset: Dataset, model: str, config: RunConfig) -> dict:
    """Posterior summary, predictive pmf and evidence for one allocation model."""
    model = AllocationModel.parse(model)
    samples = run_chain(dataset, model, config.priors, config.mcmc, rng=stream(config.mcmc.seed, model.code, 0))
    summary = summarize_posterior(samples, config.level) if samples.n_draws >= 100 else {}
    predictive = posterior_predictive_allocation(samples, config.predictive_N)
    evidence = chib_evidence(dataset, model, config.priors, config.mcmc, config.eps, pilot=samples)
    return {
        "posterior": summary,
        "acceptance": samples.acceptance,
        "predictive": {"N": config.predictive_N, "pmf": predictive.tolist()},
        "evidence": evidence,
    }


def analyze_dataset(dataset: Dataset, config: RunConfig) -> dict:
    if dataset.mode != config.mode:
        raise ValueError(f"dataset mode {dataset.mode!r} does not match run mode {config.mode!r}")
    if not dataset.is_primary:
        config.priors.require_mortality()
    fits = {AllocationModel.parse(m).value: fit_model(dataset, m, config) for m in config.models}
    evidences = {name: f.pop("evidence") for name, f in fits.items()}
    report = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "dataset": dataset.digest(),
        "classical": classical_summary(dataset) if dataset.C else None,
        "models": fits,
        "evidence": {name: e.to_dict() for name, e in evidences.items()},
        "run_config": config.to_dict(),
    }
    if len(evidences) >= 2:
        reference = "binomial" if "binomial" in evidences else next(iter(evidences))
        report["bayes_factors"] = BayesFactorReport.from_estimates(evidences, reference=reference).to_dict()
    return jsonable(report)


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False)


def config_from_report(report: dict) -> RunConfig:
    return RunConfig.from_dict(report["run_config"])


__all__ = ["RunConfig", "analyze_dataset", "config_from_report", "dumps_report", "fit_model", "jsonable"]
