"""Marginal likelihood estimation, Bayes factors and model probabilities.

``chib_evidence`` uses the identity

    log pi(D) = log pi(D | theta*) + log pi(theta*) - log pi(theta* | D)

with the likelihood ordinate computed exactly (truncated sums) and the
posterior ordinate factored block by block in the order lam, d, p, psi:
Rao-Blackwellised conditional densities for Gibbs blocks and the
Chib-Jeliazkov acceptance-probability ratio for Metropolis blocks, each from a
reduced run with the preceding blocks held at theta*.

``oracle_evidence`` integrates the likelihood deterministically over the prior
(tensor Gauss-Legendre in prior-CDF coordinates) and is used to check the
estimator on small datasets.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import betaln, gammaln, logsumexp

from . import _kernels as K
from .data import Dataset
from .distributions import AllocationModel
from .likelihood import (
    DEFAULT_EPS,
    ModelParams,
    PriorConfig,
    dataset_loglik,
    log_prior,
    primary_loglik,
    secondary_loglik_grid,
)
from .mcmc import McmcConfig, PosteriorSamples, equi_tailed_interval, run_chain
from .streams import stream


class EvidenceError(RuntimeError):
    pass


class EvidenceMethod(str, enum.Enum):
    CHIB_JELIAZKOV = "ChibJeliazkov"
    QUADRATURE = "QuadratureOracle"
    CLOSED_FORM = "ClosedForm"


@dataclass
class EvidenceEstimate:
    log_evidence: float
    mc_se: float
    theta_star: ModelParams | None
    method: EvidenceMethod
    model: AllocationModel
    dataset_digest: dict | None = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.log_evidence):
            raise EvidenceError("log evidence is not finite")
        if not self.mc_se >= 0:
            raise EvidenceError("Monte Carlo standard error must be non-negative")

    def to_dict(self) -> dict:
        return {
            "model": self.model.value,
            "log_evidence": self.log_evidence,
            "mc_se": self.mc_se,
            "method": self.method.value,
            "theta_star": None if self.theta_star is None else self.theta_star.to_dict(),
            "details": self.details,
        }


# --- Jeffreys scale --------------------------------------------------------


class JeffreysCategory(str, enum.Enum):
    BARELY = "BarelyWorthMentioning"
    SUBSTANTIAL = "Substantial"
    STRONG = "Strong"
    VERY_STRONG = "VeryStrong"
    DECISIVE = "Decisive"


JEFFREYS_THRESHOLDS = (1.0, 3.0, 10.0, 30.0, 100.0)
_CATEGORIES = tuple(JeffreysCategory)


def jeffreys_category(bf: float) -> JeffreysCategory:
    """Category of max(bf, 1/bf); bounds 1, 3, 10, 30, 100 with each lower bound inclusive."""
    strength = bf if bf >= 1 else 1.0 / bf
    idx = int(np.searchsorted(JEFFREYS_THRESHOLDS, strength, side="right")) - 1
    return _CATEGORIES[max(idx, 0)]


def _log_category(log_bf: float) -> JeffreysCategory:
    strength = abs(log_bf)
    logs = np.log(JEFFREYS_THRESHOLDS)
    idx = int(np.searchsorted(logs, strength, side="right")) - 1
    return _CATEGORIES[max(idx, 0)]


@dataclass(frozen=True)
class BayesFactor:
    log_bf: float
    numerator: str
    denominator: str
    category: JeffreysCategory

    @property
    def bf(self) -> float:
        return math.exp(self.log_bf)

    @property
    def favours(self) -> str:
        return self.numerator if self.log_bf >= 0 else self.denominator

    def to_dict(self) -> dict:
        return {
            "numerator": self.numerator,
            "denominator": self.denominator,
            "log_bf": self.log_bf,
            "bf": self.bf,
            "favours": self.favours,
            "category": self.category.value,
        }


def bayes_factor(evidence_1: EvidenceEstimate, evidence_0: EvidenceEstimate) -> BayesFactor:
    """B_10 = pi(D | H1) / pi(D | H0); strength below 1 is read as support for H0."""
    if evidence_1.dataset_digest != evidence_0.dataset_digest:
        raise ValueError("evidence estimates refer to different datasets")
    log_bf = evidence_1.log_evidence - evidence_0.log_evidence
    return BayesFactor(log_bf, evidence_1.model.value, evidence_0.model.value, _log_category(log_bf))


def model_posterior_probabilities(log_evidences, prior_weights=None) -> np.ndarray:
    """P(M_j | D) proportional to w_j exp(log e_j), normalised in log space."""
    le = np.asarray(log_evidences, float)
    if le.size < 2:
        raise ValueError("need at least two models")
    w = np.full(le.size, 1.0 / le.size) if prior_weights is None else np.asarray(prior_weights, float)
    if w.shape != le.shape or np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("prior weights must be non-negative, one per model, and sum to 1")
    with np.errstate(divide="ignore"):
        a = le + np.log(w)
    return np.exp(a - logsumexp(a))


@dataclass
class BayesFactorReport:
    log_evidence: dict[str, float]
    log_bf: dict[str, float]
    probabilities: dict[str, float]
    categories: dict[str, str]
    reference: str = "binomial"

    @classmethod
    def from_estimates(cls, estimates: dict, prior_weights=None, reference: str = "binomial") -> "BayesFactorReport":
        names = [AllocationModel.parse(k).value for k in estimates]
        ests = list(estimates.values())
        probs = model_posterior_probabilities([e.log_evidence for e in ests], prior_weights)
        log_bf, cats = {}, {}
        for i, a in enumerate(names):
            for j, b in enumerate(names):
                if i == j:
                    continue
                bf = bayes_factor(ests[i], ests[j])
                log_bf[f"{a}:{b}"] = bf.log_bf
                cats[f"{a}:{b}"] = bf.category.value
        return cls(
            log_evidence=dict(zip(names, (e.log_evidence for e in ests))),
            log_bf=log_bf,
            probabilities=dict(zip(names, map(float, probs))),
            categories=cats,
            reference=reference,
        )

    def versus_reference(self) -> dict[str, float]:
        """Bayes factors of each alternative against the reference model (natural scale)."""
        return {
            name: math.exp(self.log_bf[f"{name}:{self.reference}"])
            for name in self.log_evidence
            if name != self.reference and f"{name}:{self.reference}" in self.log_bf
        }

    def to_dict(self) -> dict:
        return {
            "log_evidence": self.log_evidence,
            "log_bayes_factors": self.log_bf,
            "bayes_factors_vs_reference": self.versus_reference(),
            "reference": self.reference,
            "posterior_probabilities": self.probabilities,
            "jeffreys_categories": self.categories,
        }


# --- Chib-Jeliazkov estimator ----------------------------------------------------


def _log_mean_exp(x: np.ndarray) -> float:
    return float(logsumexp(x) - math.log(x.size))


def _log_mean_se(x: np.ndarray, n_batches: int = 20) -> float:
    """Delta-method SE of log(mean(exp(x))) using batch means."""
    n = x.size
    b = max(2, min(n_batches, n // 5))
    size = n // b
    if size < 1:
        return float("nan")
    w = np.exp(x - x.max())
    means = w[: b * size].reshape(b, size).mean(axis=1)
    mu = w.mean()
    if mu == 0:
        return float("inf")
    return float(means.std(ddof=1) / math.sqrt(b) / mu)


@dataclass(frozen=True)
class _Block:
    name: str
    gibbs: bool
    term: int  # ordinate term for Gibbs, numerator term for MH
    den: int = -1


def _blocks(model: AllocationModel, primary: bool) -> list[_Block]:
    out = []
    if not primary:
        out += [_Block("lam", True, K.TERM_LAM), _Block("d", True, K.TERM_D)]
    if model is AllocationModel.BINOMIAL:
        out.append(_Block("p", True, K.TERM_P_GIBBS))
    else:
        out.append(_Block("p", False, K.TERM_P_NUM, K.TERM_P_DEN))
        out.append(_Block("psi", False, K.TERM_PSI_NUM, K.TERM_PSI_DEN))
    return out


def _default_theta(model, priors: PriorConfig, primary: bool) -> ModelParams:
    if primary:
        return ModelParams(0.5, 0.0)
    return ModelParams(0.5, 0.0, priors.lam_shape / priors.lam_rate, priors.d_a / (priors.d_a + priors.d_b))


def chib_evidence(
    dataset: Dataset,
    model,
    priors: PriorConfig,
    config: McmcConfig,
    eps: float = DEFAULT_EPS,
    reduced_burn_in: int | None = None,
    pilot: PosteriorSamples | None = None,
) -> EvidenceEstimate:
    """Chib-Jeliazkov evidence estimate from a pilot chain plus reduced runs.

    Reduced runs start from the pilot's final state, reuse its adapted
    proposal scales (fixed) and keep as many draws as the pilot. A pilot
    already run with ``config`` on this dataset may be passed in.
    """
    model = AllocationModel.parse(model)
    primary = dataset.is_primary
    if not primary:
        priors.require_mortality()
    if dataset.C == 0:
        return EvidenceEstimate(
            0.0, 0.0, _default_theta(model, priors, primary), EvidenceMethod.CHIB_JELIAZKOV, model, dataset.digest()
        )
    if pilot is None:
        pilot = run_chain(dataset, model, priors, config, rng=stream(config.seed, model.code, 0))
    elif pilot.model is not model:
        raise ValueError("pilot chain was run under a different model")
    if model.has_psi:
        for block in ("p", "psi"):
            if not pilot.acceptance[block] > 0:
                raise EvidenceError(f"pilot chain never accepted a {block} proposal")
    means = pilot.mean()
    star = ModelParams(
        p=means["p"],
        psi=means["psi"] if model.has_psi else 0.0,
        lam=float("nan") if primary else means["lam"],
        d=float("nan") if primary else means["d"],
    )
    if not 1e-12 < star.p < 1 - 1e-12 or (not primary and not 0 < star.d < 1):
        raise EvidenceError(f"theta* lies on the prior boundary: {star}")

    blocks = _blocks(model, primary)
    burn = config.burn_in // 5 if reduced_burn_in is None else reduced_burn_in
    run_cfg = McmcConfig(
        iterations=burn + config.n_draws * config.thin,
        burn_in=burn,
        thin=config.thin,
        seed=config.seed,
        proposal_scale_p=pilot.scales[0],
        proposal_scale_psi=pilot.scales[1],
        latent_step=config.latent_step,
        adapt=False,
    )
    log_ord: dict[str, float] = {}
    var_ord: dict[str, float] = {}
    pending_num: tuple[str, np.ndarray] | None = None
    state = pilot.final_state
    for k in range(len(blocks) + 1):
        mask = np.zeros(K.N_TERMS, np.bool_)
        if k < len(blocks):
            mask[blocks[k].term] = True
        if k > 0 and not blocks[k - 1].gibbs:
            mask[blocks[k - 1].den] = True
        if not mask.any():
            continue
        fixed = {b.name: getattr(star, b.name) for b in blocks[:k]}
        run = run_chain(
            dataset, model, priors, run_cfg, fixed=fixed, state=state,
            rng=stream(config.seed, model.code, 1 + k), scales=pilot.scales,
            target=star, term_mask=mask,
        )
        state = run.final_state
        if k > 0 and not blocks[k - 1].gibbs:
            name, num = pending_num
            den = run.terms[:, blocks[k - 1].den]
            log_ord[name] = _log_mean_exp(num) - _log_mean_exp(den)
            var_ord[name] = _log_mean_se(num) ** 2 + _log_mean_se(den) ** 2
            pending_num = None
        if k < len(blocks):
            b = blocks[k]
            x = run.terms[:, b.term]
            if b.gibbs:
                log_ord[b.name] = _log_mean_exp(x)
                var_ord[b.name] = _log_mean_se(x) ** 2
            else:
                pending_num = (b.name, x)
    if any(b.name == "p" and not b.gibbs for b in blocks):
        # the p proposal acts on logit(p); convert that ordinate to the p scale
        log_ord["p"] -= math.log(star.p) + math.log1p(-star.p)

    loglik = dataset_loglik(dataset, star, model, eps)
    lprior = log_prior(star, model, priors, primary)
    log_post = sum(log_ord.values())
    value = loglik + lprior - log_post
    se = math.sqrt(sum(var_ord.values()))
    return EvidenceEstimate(
        value,
        se,
        star,
        EvidenceMethod.CHIB_JELIAZKOV,
        model,
        dataset.digest(),
        details={
            "log_likelihood": loglik,
            "log_prior": lprior,
            "log_posterior_ordinates": log_ord,
            "acceptance": pilot.acceptance,
            "proposal_scales": list(pilot.scales),
            "pilot_means": means,
            "psi_interval": equi_tailed_interval(pilot.draws["psi"]) if model.has_psi else None,
        },
    )


# --- deterministic oracles ---------------------------------------------------------------


def binomial_primary_log_evidence(dataset: Dataset) -> float:
    """Closed form under p ~ U(0,1): prod C(N, M) * B(1 + sum M, 1 + sum (N - M))."""
    N, M = dataset.sizes.astype(float), dataset.males.astype(float)
    log_choose = gammaln(N + 1) - gammaln(M + 1) - gammaln(N - M + 1)
    return float(log_choose.sum() + betaln(1 + M.sum(), 1 + (N - M).sum()))


@dataclass(frozen=True)
class OracleGrid:
    n_start: int = 16
    n_max: int = 128
    tol: float = 0.02
    coarse: int = 24
    drop: float = 25.0  # log-likelihood drop defining the integration box

    def __post_init__(self):
        if self.n_start < 2 or self.n_max < self.n_start or self.coarse < 4:
            raise ValueError("invalid oracle grid resolution")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


class _PriorAxes:
    """Prior quantile maps for each free parameter (prior-CDF coordinates)."""

    def __init__(self, model: AllocationModel, priors: PriorConfig, primary: bool):
        self.names = ["p"] + (["psi"] if model.has_psi else []) + ([] if primary else ["lam", "d"])
        self.priors = priors

    def ppf(self, name: str, u: np.ndarray) -> np.ndarray:
        pr = self.priors
        if name == "p":
            return u
        if name == "psi":
            return stats.norm.ppf(u, 0.0, pr.sigma_psi)
        if name == "lam":
            return stats.gamma.ppf(u, pr.lam_shape, scale=1.0 / pr.lam_rate)
        return stats.beta.ppf(u, pr.d_a, pr.d_b)


def _loglik_tensor(dataset, model, axes: _PriorAxes, coords: dict, eps: float) -> np.ndarray:
    """log-likelihood over the tensor grid of prior-CDF coordinates (axes in ``axes.names`` order)."""
    vals = {name: axes.ppf(name, coords[name]) for name in axes.names}
    psi = vals.get("psi", np.zeros(1))
    if dataset.is_primary:
        out = np.empty((vals["p"].size, psi.size))
        for i, p in enumerate(vals["p"]):
            for j, s in enumerate(psi):
                out[i, j] = primary_loglik(dataset, ModelParams(float(p), float(s)), model)
        return out if model.has_psi else out[:, 0]
    grid = secondary_loglik_grid(dataset, model, vals["p"], psi, vals["lam"], vals["d"], eps)
    return grid if model.has_psi else grid[:, 0]


def _box(dataset, model, axes, eps, lo, hi, n, drop):
    """Sub-box of [lo, hi] holding every coarse cell within ``drop`` of the maximum."""
    coords = {}
    h = {}
    for k, name in enumerate(axes.names):
        h[name] = (hi[k] - lo[k]) / n
        coords[name] = lo[k] + (np.arange(n) + 0.5) * h[name]
    ll = _loglik_tensor(dataset, model, axes, coords, eps)
    keep = np.argwhere(ll >= np.nanmax(ll) - drop)
    new_lo, new_hi = lo.copy(), hi.copy()
    for k, name in enumerate(axes.names):
        a, b = keep[:, k].min(), keep[:, k].max()
        new_lo[k] = max(lo[k], coords[name][a] - 1.5 * h[name])
        new_hi[k] = min(hi[k], coords[name][b] + 1.5 * h[name])
    return new_lo, new_hi


def _gauss_legendre_log_integral(dataset, model, axes, eps, lo, hi, n) -> float:
    x, w = np.polynomial.legendre.leggauss(n)
    coords, logw = {}, []
    for k, name in enumerate(axes.names):
        half = (hi[k] - lo[k]) / 2
        coords[name] = lo[k] + half * (x + 1)
        logw.append(np.log(w * half))
    ll = _loglik_tensor(dataset, model, axes, coords, eps)
    total = ll
    for k, lw in enumerate(logw):
        shape = [1] * len(logw)
        shape[k] = n
        total = total + lw.reshape(shape)
    return float(logsumexp(total))


def oracle_evidence(
    dataset: Dataset,
    model,
    priors: PriorConfig,
    grid: OracleGrid | None = None,
    eps: float = DEFAULT_EPS,
) -> EvidenceEstimate:
    """Deterministic evidence by tensor quadrature; for small datasets (up to 4 parameters).

    The integration box is found in prior-CDF coordinates by two coarse passes;
    node counts double until successive values differ by less than ``grid.tol``.
    """
    model = AllocationModel.parse(model)
    grid = grid or OracleGrid()
    primary = dataset.is_primary
    if not primary:
        priors.require_mortality()
    if dataset.C == 0:
        return EvidenceEstimate(
            0.0, 0.0, _default_theta(model, priors, primary), EvidenceMethod.QUADRATURE, model, dataset.digest()
        )
    axes = _PriorAxes(model, priors, primary)
    dim = len(axes.names)
    lo, hi = np.zeros(dim), np.ones(dim)
    for _ in range(2):
        lo, hi = _box(dataset, model, axes, eps, lo, hi, grid.coarse, grid.drop)
    history = []
    n = grid.n_start
    while n <= grid.n_max:
        history.append(_gauss_legendre_log_integral(dataset, model, axes, eps, lo, hi, n))
        if len(history) >= 2 and abs(history[-1] - history[-2]) < grid.tol:
            break
        n *= 2
    else:
        raise EvidenceError(f"quadrature did not converge: successive values {history}")
    return EvidenceEstimate(
        history[-1],
        0.0,
        None,
        EvidenceMethod.QUADRATURE,
        model,
        dataset.digest(),
        details={"refinements": history, "nodes": n, "box": [lo.tolist(), hi.tolist()], "axes": axes.names},
    )


def closed_form_evidence(dataset: Dataset) -> EvidenceEstimate:
    if not dataset.is_primary:
        raise ValueError("closed form available for primary data under the binomial model only")
    return EvidenceEstimate(
        binomial_primary_log_evidence(dataset), 0.0, None, EvidenceMethod.CLOSED_FORM,
        AllocationModel.BINOMIAL, dataset.digest(),
    )


def evidence_table(
    dataset: Dataset, models, priors: PriorConfig, config: McmcConfig, eps: float = DEFAULT_EPS
) -> dict[str, EvidenceEstimate]:
    return {AllocationModel.parse(m).value: chib_evidence(dataset, m, priors, config, eps) for m in models}
