"""Synthetic data, classical power surfaces and Bayesian comparison studies.

Every replicate draws from its own stream keyed by (master seed, cell,
replicate), so a dataset does not depend on which other replicates ran.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .classical import dispersion_ratio_batch, james_batch, mccullagh_batch, meelis_batch
from .data import PRIMARY, Dataset
from .distributions import AllocationModel, DispersionParams, allocation_table
from .evidence import chib_evidence, model_posterior_probabilities
from .likelihood import PriorConfig
from .mcmc import McmcConfig
from .streams import seed_sequence, stream

DEFAULT_C_GRID = (10, 25, 50, 100, 200, 400)
DEFAULT_D_GRID = tuple(round(0.05 * i, 2) for i in range(13))

# generator values fitted to an under-dispersed primary dataset (power surfaces)
POWER_BASE = dict(lam=10.0, p=0.00278, psi=0.445, model="mult")
# moderate under-dispersion and mortality (Bayes vs Meelis study)
STUDY_BASE = dict(C=50, lam=10.0, p=0.1, psi=0.3, d=0.3, model="mult")

MEELIS_BINS = (0.1, 0.05, 0.01, 0.001)
MEELIS_LABELS = (">0.1", "0.05-0.1", "0.01-0.05", "0.001-0.01", "<0.001")
BF_BINS = (3.0, 10.0, 30.0, 100.0)
BF_LABELS = ("0-3", "3-10", "10-30", "30-100", ">100")


@dataclass(frozen=True)
class GeneratorSpec:
    C: int
    lam: float
    model: str = "binomial"
    p: float = 0.5
    psi: float = 0.0
    d: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.C < 1:
            raise ValueError("C must be at least 1")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not 0 <= self.d < 1:
            raise ValueError("d must lie in [0, 1)")
        AllocationModel.parse(self.model)
        DispersionParams(self.p, self.psi)

    @property
    def allocation(self) -> AllocationModel:
        return AllocationModel.parse(self.model)

    def with_(self, **kw) -> "GeneratorSpec":
        return GeneratorSpec(**{**asdict(self), **kw})


@dataclass
class SimulatedData:
    primary: Dataset
    secondary: Dataset

    @property
    def deaths(self) -> np.ndarray:
        return self.primary.sizes - self.secondary.sizes


class _Sampler:
    """Cached inverse-CDF table of the allocation law for one generator."""

    def __init__(self, spec: GeneratorSpec):
        self.spec = spec
        self.nmax = -1
        self.cdf = None

    def _ensure(self, nmax: int):
        if nmax > self.nmax:
            nmax = max(nmax, int(self.spec.lam + 10 * math.sqrt(self.spec.lam) + 10))
            table = allocation_table(self.spec.allocation, nmax, self.spec.p, self.spec.psi)
            self.cdf = np.cumsum(np.exp(table), axis=1)
            self.nmax = nmax

    def draw(self, rng: np.random.Generator) -> SimulatedData:
        s = self.spec
        N = rng.poisson(s.lam, s.C).astype(np.int64)
        self._ensure(int(N.max()))
        rows = self.cdf[N]
        u = rng.random(s.C) * rows[np.arange(s.C), N]
        M = np.minimum((rows <= u[:, None]).sum(axis=1), N).astype(np.int64)
        m = rng.binomial(M, 1.0 - s.d)
        f = rng.binomial(N - M, 1.0 - s.d)
        return SimulatedData(Dataset(N, M, mode=PRIMARY), Dataset(m + f, m, deaths=N - m - f))


def simulate_dataset(spec: GeneratorSpec, rng: np.random.Generator | None = None) -> SimulatedData:
    """Poisson clutch sizes, allocation draws, then independent egg deaths.

    Both the hidden primary counts and the observed secondary counts are returned.
    """
    return _Sampler(spec).draw(rng if rng is not None else stream(spec.seed))


def replicate_rng(seed: int, cell: int, rep: int) -> np.random.Generator:
    return stream(seed, cell, rep)


# --- classical power surfaces ---------------------------------------------------------


@dataclass
class PowerSurface:
    test: str
    alpha: float
    C_values: list[int]
    d_values: list[float]
    reps: int
    power: np.ndarray
    mean_R: np.ndarray
    mean_s2: np.ndarray
    indeterminate: np.ndarray
    generator: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(self.power * (1 - self.power) / self.reps)

    def cell(self, C: int, d: float) -> dict:
        i = self.C_values.index(C)
        j = int(np.argmin(np.abs(np.asarray(self.d_values) - d)))
        return {
            "C": C, "d": self.d_values[j], "power": float(self.power[i, j]), "se": float(self.se[i, j]),
            "mean_R": float(self.mean_R[i, j]), "mean_s2": float(self.mean_s2[i, j]),
            "indeterminate": int(self.indeterminate[i, j]),
        }

    def rows(self) -> list[dict]:
        return [self.cell(C, d) for C in self.C_values for d in self.d_values]

    def to_csv(self, path):
        rows = self.rows()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)

    def to_dict(self) -> dict:
        return {
            "test": self.test, "alpha": self.alpha, "reps": self.reps, "seed": self.seed,
            "generator": self.generator, "C_values": self.C_values, "d_values": self.d_values,
            "cells": self.rows(),
        }


def _stack(datasets: list[Dataset]):
    rep = np.repeat(np.arange(len(datasets)), [ds.C for ds in datasets])
    sizes = np.concatenate([ds.sizes for ds in datasets])
    males = np.concatenate([ds.males for ds in datasets])
    return rep, sizes, males


def classical_replicates(spec: GeneratorSpec, reps: int, seed: int, cell: int = 0) -> dict[str, np.ndarray]:
    """Meelis, James, R and s^2 for ``reps`` secondary datasets from one generator."""
    sampler = _Sampler(spec)
    data = [sampler.draw(replicate_rng(seed, cell, r)).secondary for r in range(reps)]
    rep, sizes, males = _stack(data)
    U_m, p_m, _ = meelis_batch(rep, sizes, males, reps)
    U_j, p_j = james_batch(rep, sizes, males, reps)
    return {
        "meelis_U": U_m, "meelis_p": p_m, "james_U": U_j, "james_p": p_j,
        "R": dispersion_ratio_batch(rep, sizes, males, reps),
        "s2": mccullagh_batch(rep, sizes, males, reps),
    }


def classical_power_surface(
    C_values=DEFAULT_C_GRID,
    d_values=DEFAULT_D_GRID,
    generator: dict | None = None,
    reps: int = 10_000,
    test: str = "meelis",
    alpha: float = 0.05,
    seed: int = 0,
) -> PowerSurface:
    """Two-sided rejection rate per (C, d) cell; undefined statistics count as non-rejections."""
    if reps < 100:
        raise ValueError("reps must be at least 100")
    if test not in ("meelis", "james"):
        raise ValueError(f"unknown test {test!r}")
    gen = dict(POWER_BASE if generator is None else generator)
    C_values, d_values = [int(c) for c in C_values], [float(d) for d in d_values]
    shape = (len(C_values), len(d_values))
    power, mean_R, mean_s2 = np.zeros(shape), np.full(shape, np.nan), np.full(shape, np.nan)
    indet = np.zeros(shape, np.int64)
    for i, C in enumerate(C_values):
        for j, d in enumerate(d_values):
            spec = GeneratorSpec(C=C, d=d, seed=seed, **gen)
            res = classical_replicates(spec, reps, seed, cell=i * len(d_values) + j)
            pv = res[f"{test}_p"]
            power[i, j] = np.mean(np.nan_to_num(pv, nan=1.0) < alpha)
            indet[i, j] = int(np.isnan(pv).sum())
            if np.isfinite(res["R"]).any():
                mean_R[i, j] = np.nanmean(res["R"])
            if np.isfinite(res["s2"]).any():
                mean_s2[i, j] = np.nanmean(res["s2"])
    return PowerSurface(test, alpha, C_values, d_values, reps, power, mean_R, mean_s2, indet, gen, seed)


# --- Bayesian studies -----------------------------------------------------------------


def study_priors() -> PriorConfig:
    """Priors centred on the generating lam and d (used by both studies)."""
    return PriorConfig(sigma_psi=1.0, lam_shape=10.0, lam_rate=1.0, d_a=3.0, d_b=7.0)


def study_mcmc_config(seed: int = 0) -> McmcConfig:
    return McmcConfig(iterations=12_000, burn_in=2_000, thin=1, seed=seed, latent_step=3)


@dataclass
class ReplicateResult:
    index: int
    meelis_U: float | None
    meelis_p: float | None
    log_bf: float | None
    prob_null: float | None
    psi_interval: tuple[float, float] | None = None
    error: str | None = None


def analyse_replicate(
    index: int, data: Dataset, priors: PriorConfig, config: McmcConfig, alt: str = "mult"
) -> ReplicateResult:
    rep = np.zeros(data.C, np.int64)
    U, p, _ = meelis_batch(rep, data.sizes, data.males, 1)
    U = None if not np.isfinite(U[0]) else float(U[0])
    p = None if U is None else float(p[0])
    try:
        e0 = chib_evidence(data, "binomial", priors, config)
        e1 = chib_evidence(data, alt, priors, config)
    except (RuntimeError, ValueError, FloatingPointError) as exc:
        return ReplicateResult(index, U, p, None, None, error=f"{type(exc).__name__}: {exc}")
    log_bf = e1.log_evidence - e0.log_evidence
    prob0 = float(model_posterior_probabilities([e0.log_evidence, e1.log_evidence])[0])
    interval = e1.details.get("psi_interval")
    return ReplicateResult(index, U, p, log_bf, prob0, interval)


def _bucket(values, edges, descending: bool) -> np.ndarray:
    values = np.asarray(values, float)
    counts = np.zeros(len(edges) + 1, np.int64)
    for v in values:
        if descending:  # p-values: first bucket is the largest
            k = sum(v <= e for e in edges)
        else:
            k = sum(v > e for e in edges)
        counts[k] += 1
    return counts


@dataclass
class StudySummary:
    name: str
    spec: GeneratorSpec
    results: list[ReplicateResult]
    config: dict = field(default_factory=dict)

    @property
    def ok(self) -> list[ReplicateResult]:
        return [r for r in self.results if r.error is None]

    @property
    def failures(self) -> list[ReplicateResult]:
        return [r for r in self.results if r.error is not None]

    def meelis_table(self) -> dict[str, float]:
        # undefined Meelis statistics show no evidence, so they land in the first bucket
        pv = [1.0 if r.meelis_p is None else r.meelis_p for r in self.results]
        counts = _bucket(pv, MEELIS_BINS, descending=True)
        return dict(zip(MEELIS_LABELS, (100.0 * counts / max(len(pv), 1)).tolist()))

    def bf_table(self) -> dict[str, float]:
        bf = [math.exp(r.log_bf) for r in self.ok]
        counts = _bucket(bf, BF_BINS, descending=False)
        return dict(zip(BF_LABELS, (100.0 * counts / max(len(bf), 1)).tolist()))

    def meelis_rejection_rate(self, alpha: float = 0.05) -> float:
        return float(np.mean([r.meelis_p is not None and r.meelis_p < alpha for r in self.results]))

    def bayes_rejection_rate(self, level: float = 0.05) -> float:
        return float(np.mean([r.prob_null <= level for r in self.ok]))

    def psi_excludes_zero(self) -> int:
        return sum(1 for r in self.ok if r.psi_interval and (r.psi_interval[0] > 0 or r.psi_interval[1] < 0))

    def dominance(self, bf_fail: float = 3.0, alpha: float = 0.05) -> float:
        """Fraction of Bayes failures (BF < bf_fail) where Meelis also fails at ``alpha``."""
        fails = [r for r in self.ok if math.exp(r.log_bf) < bf_fail]
        if not fails:
            return 1.0
        return float(np.mean([r.meelis_p is None or r.meelis_p >= alpha for r in fails]))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "generator": asdict(self.spec),
            "config": self.config,
            "replicates": len(self.results),
            "failures": len(self.failures),
            "meelis_table": self.meelis_table(),
            "bf_table": self.bf_table(),
            "meelis_rejection": self.meelis_rejection_rate(),
            "bayes_rejection": self.bayes_rejection_rate() if self.ok else None,
            "psi_excludes_zero": self.psi_excludes_zero(),
            "dominance": self.dominance() if self.ok else None,
            "results": [asdict(r) for r in self.results],
        }

    def scatter_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "meelis_U", "meelis_p", "log_bf", "prob_null", "psi_lower", "psi_upper", "error"])
            for r in self.results:
                lo, hi = r.psi_interval or (None, None)
                w.writerow([r.index, r.meelis_U, r.meelis_p, r.log_bf, r.prob_null, lo, hi, r.error or ""])

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _run_study(name, spec, reps, priors, config, progress=None) -> StudySummary:
    sampler = _Sampler(spec)
    results = []
    for r in range(reps):
        data = sampler.draw(replicate_rng(spec.seed, 0, r)).secondary
        chain_seed = int(seed_sequence(spec.seed, 1, r).generate_state(1)[0])
        cfg = McmcConfig(**{**config.to_dict(), "seed": chain_seed})
        results.append(analyse_replicate(r, data, priors, cfg))
        if progress:
            progress(r, results[-1])
    return StudySummary(name, spec, results, {"mcmc": config.to_dict(), "priors": priors.to_dict()})


def bayes_vs_meelis_study(
    reps: int = 100,
    spec: GeneratorSpec | None = None,
    mcmc_config: McmcConfig | None = None,
    priors: PriorConfig | None = None,
    progress=None,
) -> StudySummary:
    """Meelis p-value and BF(mult : binomial) for each synthetic under-dispersed dataset."""
    if reps < 20:
        raise ValueError("reps must be at least 20")
    spec = spec or GeneratorSpec(**STUDY_BASE)
    return _run_study(
        "bayes_vs_meelis", spec, reps, priors or study_priors(), mcmc_config or study_mcmc_config(), progress
    )


def type1_error_study(
    reps: int = 200,
    spec_null: GeneratorSpec | None = None,
    mcmc_config: McmcConfig | None = None,
    priors: PriorConfig | None = None,
    progress=None,
) -> StudySummary:
    """Same analysis on binomial-truth data: false rejection rates of both procedures."""
    spec_null = spec_null or GeneratorSpec(**{**STUDY_BASE, "model": "binomial", "psi": 0.0})
    if spec_null.allocation is not AllocationModel.BINOMIAL:
        raise ValueError("type-I study needs a binomial generator")
    return _run_study(
        "type1_error", spec_null, reps, priors or study_priors(), mcmc_config or study_mcmc_config(), progress
    )
