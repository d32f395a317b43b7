"""Posterior sampling for the allocation-plus-mortality models.

The augmented chain samples pi(theta, N, M | D) with Gibbs updates for lam and
d (and for p under the binomial model), random-walk Metropolis for logit(p)
and psi, and a joint Metropolis move per clutch for the latent (N_i, M_i).
The collapsed chain samples theta alone using the exact truncated-sum
likelihood.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .data import Dataset
from .distributions import AllocationModel, allocation_table
from .likelihood import (
    DEFAULT_EPS,
    ModelParams,
    PriorConfig,
    SecondaryLikelihood,
    complete_data_logposterior,
    log_prior,
    primary_loglik,
)
from .streams import stream

PARAM_NAMES = ("p", "psi", "lam", "d")


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 1_000_000
    burn_in: int = 100_000
    thin: int = 10
    seed: int = 0
    proposal_scale_p: float = 0.5
    proposal_scale_psi: float = 0.3
    latent_step: int = 1  # latent moves per clutch per sweep
    adapt: bool = True

    def __post_init__(self):
        if self.iterations < 1 or self.thin < 1 or self.latent_step < 1:
            raise ValueError("iterations, thin and latent_step must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if not (self.proposal_scale_p > 0 and self.proposal_scale_psi > 0):
            raise ValueError("proposal scales must be positive")

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ChainState:
    params: ModelParams
    N: np.ndarray
    M: np.ndarray
    log_post: float = float("nan")

    def theta(self) -> np.ndarray:
        return self.params.as_array().copy()

    def copy(self) -> "ChainState":
        return ChainState(self.params, self.N.copy(), self.M.copy(), self.log_post)


@dataclass
class PosteriorSamples:
    model: AllocationModel
    draws: dict[str, np.ndarray]
    acceptance: dict[str, float]
    scales: tuple[float, float]
    final_state: ChainState | None = None
    latents: tuple[np.ndarray, np.ndarray] | None = None
    terms: np.ndarray | None = None
    config: McmcConfig | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.model = AllocationModel.parse(self.model)

    @property
    def n_draws(self) -> int:
        return int(self.draws["p"].size)

    def mean(self) -> dict[str, float]:
        return {k: float(np.mean(v)) for k, v in self.draws.items()}


def _validate_primary_or_priors(dataset: Dataset, priors: PriorConfig):
    if not dataset.is_primary:
        priors.require_mortality()


def init_chain(dataset: Dataset, model, priors: PriorConfig, config: McmcConfig | None = None) -> ChainState:
    """Feasible starting state built from the observed counts and prior means."""
    model = AllocationModel.parse(model)
    n, m = dataset.sizes, dataset.males
    total = int(n.sum())
    if dataset.C and total == 0:
        raise ValueError("cannot initialise p: no surviving offspring in the data")
    ratio = m.sum() / total if total else 0.5
    p0 = float(np.clip(ratio, 0.01, 0.99))
    if dataset.is_primary:
        state = ChainState(ModelParams(p0, 0.0), n.astype(np.int64).copy(), m.astype(np.int64).copy())
    else:
        priors.require_mortality()
        d0 = priors.d_a / (priors.d_a + priors.d_b)
        N0 = n + np.rint(n * d0 / (1 - d0)).astype(np.int64)
        extra = N0 - n
        M0 = m + np.minimum(extra, np.rint(extra * ratio).astype(np.int64))
        lam0 = float(N0.mean()) if dataset.C and N0.mean() > 0 else priors.lam_shape / priors.lam_rate
        state = ChainState(ModelParams(p0, 0.0, lam0, d0), N0.astype(np.int64), M0.astype(np.int64))
    state.log_post = complete_data_logposterior(dataset, (state.N, state.M), state.params, model, priors)
    return state


def recompute_log_post(state: ChainState, dataset: Dataset, model, priors: PriorConfig) -> float:
    state.log_post = complete_data_logposterior(dataset, (state.N, state.M), state.params, model, priors)
    return state.log_post


# --- single-block updates (thin wrappers around the compiled steps) -------


def gibbs_update_lambda(state: ChainState, priors: PriorConfig, rng: np.random.Generator) -> float:
    lam = K.draw_lambda(state.N, float(priors.lam_shape), float(priors.lam_rate), rng)
    state.params = replace(state.params, lam=float(lam))
    return float(lam)


def gibbs_update_d(state: ChainState, dataset: Dataset, priors: PriorConfig, rng: np.random.Generator) -> float:
    d = K.draw_d(state.N, dataset.sizes, float(priors.d_a), float(priors.d_b), rng)
    state.params = replace(state.params, d=float(d))
    return float(d)


def update_p(state: ChainState, model, priors: PriorConfig, config: McmcConfig, rng: np.random.Generator):
    """Gibbs draw under the binomial model, logit random walk otherwise; returns (p, accepted)."""
    model = AllocationModel.parse(model)
    if model is AllocationModel.BINOMIAL:
        p, ok = K.draw_p_binomial(state.N, state.M, rng), True
    else:
        p, ok = K.mh_p(model.code, state.N, state.M, state.params.p, state.params.psi, config.proposal_scale_p, rng)
    state.params = replace(state.params, p=float(p))
    return float(p), bool(ok)


def update_psi(state: ChainState, model, priors: PriorConfig, config: McmcConfig, rng: np.random.Generator):
    model = AllocationModel.parse(model)
    if not model.has_psi:
        warnings.warn("binomial model has no dispersion parameter; psi update skipped", stacklevel=2)
        return state.params.psi, None
    psi, ok = K.mh_psi(
        model.code, state.N, state.M, state.params.p, state.params.psi,
        float(priors.sigma_psi), config.proposal_scale_psi, rng,
    )
    state.params = replace(state.params, psi=float(psi))
    return float(psi), bool(ok)


def update_latents(state: ChainState, dataset: Dataset, model, rng: np.random.Generator, moves: int = 1) -> int:
    model = AllocationModel.parse(model)
    psi = state.params.psi if model.has_psi else 0.0
    return int(
        K.latent_sweep(
            model.code, dataset.sizes, dataset.males, state.N, state.M,
            state.params.p, psi, state.params.lam, state.params.d, moves, rng,
        )
    )


# --- full runs -------------------------------------------------------------


def _prior_array(priors: PriorConfig) -> np.ndarray:
    vals = [priors.sigma_psi, priors.lam_shape, priors.lam_rate, priors.d_a, priors.d_b]
    return np.array([np.nan if v is None else float(v) for v in vals])


def run_chain(
    dataset: Dataset,
    model,
    priors: PriorConfig,
    config: McmcConfig,
    *,
    fixed: dict[str, float] | None = None,
    state: ChainState | None = None,
    rng: np.random.Generator | None = None,
    scales: tuple[float, float] | None = None,
    target: ModelParams | None = None,
    term_mask=None,
    store_latents: bool = False,
) -> PosteriorSamples:
    """Augmented-chain sampler; each sweep updates lam, d, p, psi, then latents.

    ``fixed`` pins named parameters (used by the reduced runs of the evidence
    estimator); ``target`` with ``term_mask`` records posterior-ordinate terms
    at every kept draw.
    """
    model = AllocationModel.parse(model)
    _validate_primary_or_priors(dataset, priors)
    fixed = dict(fixed or {})
    if rng is None:
        rng = stream(config.seed, model.code)
    if state is None:
        state = init_chain(dataset, model, priors, config)
    else:
        state = state.copy()
    if not model.has_psi:
        fixed["psi"] = 0.0
    if dataset.is_primary:
        fixed.setdefault("lam", float("nan"))
        fixed.setdefault("d", float("nan"))
    theta = state.theta()
    for name, value in fixed.items():
        theta[PARAM_NAMES.index(name)] = value
    update = np.array(
        [name not in fixed for name in PARAM_NAMES] + [not dataset.is_primary], dtype=np.bool_
    )
    scale_arr = np.array(scales if scales is not None else (config.proposal_scale_p, config.proposal_scale_psi), float)
    tgt = target.as_array() if target is not None else np.full(4, np.nan)
    mask = np.zeros(K.N_TERMS, np.bool_) if term_mask is None else np.asarray(term_mask, np.bool_)
    N = state.N.astype(np.int64).copy()
    M = state.M.astype(np.int64).copy()
    draws, acc, prop, terms, lat_N, lat_M = K.run_sweeps(
        model.code, dataset.sizes, dataset.males, N, M, theta, _prior_array(priors), update, scale_arr,
        config.iterations, config.burn_in, config.thin, config.adapt and scales is None,
        config.latent_step, tgt, mask, store_latents, rng,
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = np.where(prop > 0, acc / np.maximum(prop, 1), np.nan)
    final = ChainState(ModelParams(*theta), N, M)
    return PosteriorSamples(
        model=model,
        draws={name: draws[:, j].copy() for j, name in enumerate(PARAM_NAMES)},
        acceptance={"p": float(rates[0]), "psi": float(rates[1]), "latents": float(rates[2])},
        scales=(float(scale_arr[0]), float(scale_arr[1])),
        final_state=final,
        latents=(lat_N, lat_M) if store_latents else None,
        terms=terms if mask.any() else None,
        config=config,
    )


def run_collapsed_chain(
    dataset: Dataset,
    model,
    priors: PriorConfig,
    config: McmcConfig,
    eps: float = DEFAULT_EPS,
    rng: np.random.Generator | None = None,
) -> PosteriorSamples:
    """Latent-free random-walk Metropolis on (logit p, psi, log lam, logit d).

    Each block is updated in turn against the exact observed-data likelihood.
    """
    model = AllocationModel.parse(model)
    _validate_primary_or_priors(dataset, priors)
    if rng is None:
        rng = stream(config.seed, model.code, 1)
    primary = dataset.is_primary
    lik = None if primary or dataset.C == 0 else SecondaryLikelihood(dataset, model, eps)

    def to_params(x):
        p = 1.0 / (1.0 + math.exp(-x[0]))
        if primary:
            return ModelParams(p, x[1])
        return ModelParams(p, x[1], math.exp(x[2]), 1.0 / (1.0 + math.exp(-x[3])))

    def log_target(x):
        try:
            par = to_params(x)
        except ValueError:
            return -math.inf
        if not (0 < par.p < 1) or (not primary and not 0 < par.d < 1):
            return -math.inf
        ll = primary_loglik(dataset, par, model) if primary else (lik(par) if lik else 0.0)
        jac = math.log(par.p) + math.log1p(-par.p)
        if not primary:
            jac += math.log(par.lam) + math.log(par.d) + math.log1p(-par.d)
        return ll + log_prior(par, model, priors, primary) + jac

    start = init_chain(dataset, model, priors, config).params
    x = np.array([math.log(start.p / (1 - start.p)), 0.0, 0.0, 0.0])
    if not primary:
        x[2] = math.log(start.lam)
        x[3] = math.log(start.d / (1 - start.d))
    blocks = [0] + ([1] if model.has_psi else []) + ([] if primary else [2, 3])
    scale = np.array([config.proposal_scale_p, config.proposal_scale_psi, 0.1, 0.5])
    cur = log_target(x)
    acc = np.zeros(4)
    prop = np.zeros(4)
    out = np.empty((config.n_draws, 4))
    k = 0
    for it in range(config.iterations):
        post = it >= config.burn_in
        gain = 1.0 / (it + 1.0) ** 0.6
        for b in blocks:
            y = x.copy()
            y[b] += scale[b] * rng.normal()
            new = log_target(y)
            ok = math.log(rng.random()) < new - cur
            if ok:
                x, cur = y, new
            if post:
                acc[b] += ok
                prop[b] += 1
            elif config.adapt:
                scale[b] *= math.exp(gain * (float(ok) - 0.44))
        if post and (it - config.burn_in + 1) % config.thin == 0:
            par = to_params(x)
            out[k] = par.as_array()
            k += 1
    with np.errstate(invalid="ignore"):
        rates = acc / np.where(prop > 0, prop, np.nan)
    return PosteriorSamples(
        model=model,
        draws={name: out[:, j].copy() for j, name in enumerate(PARAM_NAMES)},
        acceptance={name: float(rates[j]) for j, name in enumerate(PARAM_NAMES)},
        scales=(float(scale[0]), float(scale[1])),
        config=config,
        extra={"sampler": "collapsed"},
    )


# --- summaries ----------------------------------------------------------------


def equi_tailed_interval(x: np.ndarray, level: float = 0.95) -> tuple[float, float]:
    alpha = 1.0 - level
    lo, hi = np.quantile(x, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)


def summarize_posterior(samples: PosteriorSamples, level: float = 0.95, params=None) -> dict[str, dict]:
    """Mean, median and equi-tailed interval per parameter."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if samples.n_draws < 100:
        raise ValueError(f"need at least 100 draws to summarise, got {samples.n_draws}")
    names = params or [k for k in PARAM_NAMES if np.all(np.isfinite(samples.draws[k]))]
    if not samples.model.has_psi and params is None:
        names = [k for k in names if k != "psi"]
    out = {}
    for name in names:
        x = samples.draws[name]
        lo, hi = equi_tailed_interval(x, level)
        out[name] = {
            "mean": float(np.mean(x)),
            "median": float(np.median(x)),
            "lower": lo,
            "upper": hi,
            "level": level,
            "ess": effective_sample_size(x),
        }
    return out


def effective_sample_size(x: np.ndarray) -> float:
    """ESS from the initial positive sequence of autocorrelation pairs."""
    x = np.asarray(x, float)
    n = x.size
    if n < 4:
        return float(n)
    xc = x - x.mean()
    var = xc @ xc / n
    if var == 0:
        return float(n)
    f = np.fft.rfft(xc, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    total = 0.0
    for t in range(0, n - 1, 2):
        pair = acf[t] + acf[t + 1]
        if pair <= 0:
            break
        total += pair
    tau = max(2 * total - 1, 1.0 / n)
    return float(n / tau)


def posterior_predictive_allocation(samples: PosteriorSamples, N: int, max_draws: int = 20_000) -> np.ndarray:
    """pmf of M in a new clutch of N eggs, averaged over posterior draws of (p, psi)."""
    p = samples.draws["p"]
    psi = samples.draws["psi"] if samples.model.has_psi else np.zeros_like(p)
    if p.size > max_draws:
        idx = np.linspace(0, p.size - 1, max_draws).astype(int)
        p, psi = p[idx], psi[idx]
    pmf = np.zeros(N + 1)
    for pi, si in zip(p, psi):
        pmf += np.exp(allocation_table(samples.model, N, float(pi), float(si))[N])
    return pmf / p.size
