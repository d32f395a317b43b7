"""Observed-data and complete-data likelihoods under allocation plus mortality.

Clutch sizes are Poisson(lam) and each egg dies independently with probability
d. Poisson thinning makes survivors n ~ Po(lam (1 - d)) and deaths N - n ~
Po(lam d) independent, so the marginal probability of an observed clutch is

    P(n, m) = Po(n; lam(1-d)) * sum_j Po(j; lam d) sum_M P(M | n+j) H(m | n+j, M, n)

with H the survivor hypergeometric law. The sum over deaths j is truncated
where the Po(lam d) upper tail drops below ``eps``, so the missing mass is at
most ``eps * Po(n; lam(1-d))`` per clutch.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp

from .data import Dataset
from .distributions import (
    AllocationModel,
    DispersionParams,
    allocation_table,
    is_feasible,
    log_pmf_allocation,
    poisson_truncation_bound,
    survivor_logpmf,
)

DEFAULT_EPS = 1e-10


@dataclass(frozen=True)
class ModelParams:
    p: float
    psi: float = 0.0
    lam: float = float("nan")
    d: float = float("nan")

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")
        if not math.isfinite(self.psi):
            raise ValueError("psi must be finite")

    def check_mortality(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not 0.0 <= self.d < 1.0:
            raise ValueError(f"d must lie in [0, 1), got {self.d}")

    def dispersion(self, model) -> DispersionParams:
        psi = self.psi if AllocationModel.parse(model).has_psi else 0.0
        return DispersionParams(self.p, psi)

    def as_array(self) -> np.ndarray:
        return np.array([self.p, self.psi, self.lam, self.d])

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PriorConfig:
    """p ~ U(0, 1), psi ~ N(0, sigma_psi^2), lam ~ Gamma(shape, rate), d ~ Beta(d_a, d_b)."""

    sigma_psi: float = 1.0
    lam_shape: float | None = None
    lam_rate: float | None = None
    d_a: float | None = None
    d_b: float | None = None

    def __post_init__(self):
        for name in ("sigma_psi", "lam_shape", "lam_rate", "d_a", "d_b"):
            value = getattr(self, name)
            if value is not None and not (value > 0 and math.isfinite(value)):
                raise ValueError(f"prior parameter {name} must be positive, got {value}")

    @property
    def has_mortality(self) -> bool:
        return None not in (self.lam_shape, self.lam_rate, self.d_a, self.d_b)

    def require_mortality(self):
        if not self.has_mortality:
            raise ValueError("secondary-data analysis needs lam and d priors (lam_shape, lam_rate, d_a, d_b)")

    def to_dict(self) -> dict:
        return asdict(self)


def log_prior(params: ModelParams, model, priors: PriorConfig, primary: bool = False) -> float:
    model = AllocationModel.parse(model)
    lp = 0.0  # uniform p
    if model.has_psi:
        lp += stats.norm.logpdf(params.psi, 0.0, priors.sigma_psi)
    if not primary:
        priors.require_mortality()
        lp += stats.gamma.logpdf(params.lam, priors.lam_shape, scale=1.0 / priors.lam_rate)
        lp += stats.beta.logpdf(params.d, priors.d_a, priors.d_b)
    return float(lp)


def _log_poisson(k, mu):
    k = np.asarray(k, dtype=float)
    mu = np.asarray(mu, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = k * np.log(mu) - mu - gammaln(k + 1)
    return np.where((mu == 0) & (k == 0), 0.0, np.where(mu == 0, -np.inf, out))


def deaths_bound(lam: float, d: float, eps: float) -> int:
    return poisson_truncation_bound(lam * d, eps)


def clutch_marginal_loglik(n: int, m: int, params: ModelParams, model, eps: float = DEFAULT_EPS) -> float:
    """log P(n, m | theta) for one secondary clutch (scalar reference path)."""
    if not 0 <= m <= n:
        raise ValueError(f"need 0 <= m <= n, got n={n}, m={m}")
    params.check_mortality()
    disp = params.dispersion(model)
    J = deaths_bound(params.lam, params.d, eps)
    terms = []
    for j in range(J + 1):
        N = n + j
        logP = allocation_table(model, N, disp.p, disp.psi)[N]
        M = np.arange(m, m + j + 1)
        log_h = survivor_logpmf(N, M, n, m)
        inner = logsumexp(logP[M] + log_h)
        terms.append(float(_log_poisson(j, params.lam * params.d)) + inner)
    total = float(_log_poisson(n, params.lam * (1 - params.d))) + float(logsumexp(terms))
    if not math.isfinite(total):
        raise FloatingPointError(f"zero likelihood for clutch (n={n}, m={m})")
    return total


class SecondaryLikelihood:
    """Vectorised truncated-sum likelihood for a fixed secondary dataset.

    The hypergeometric survivor factors do not depend on theta and are built
    once per unique (n, m) record; each evaluation then needs one allocation
    table and a few tensor contractions.
    """

    def __init__(self, dataset: Dataset, model, eps: float = DEFAULT_EPS):
        if dataset.is_primary:
            raise ValueError("SecondaryLikelihood needs secondary data")
        self.model = AllocationModel.parse(model)
        self.eps = eps
        self.n_u, self.m_u, self.count_u = dataset.unique_pairs()
        self._J = -1
        self._H = None

    def _survivor_tensor(self, J: int) -> np.ndarray:
        if J > self._J:
            J = max(J, 2 * self._J, 8)
            j = np.arange(J + 1)
            N = self.n_u[:, None, None] + j[None, :, None]
            Mmax = int(self.n_u.max(initial=0)) + J
            M = np.arange(Mmax + 1)[None, None, :]
            H = np.exp(survivor_logpmf(N, M, self.n_u[:, None, None], self.m_u[:, None, None]))
            self._H, self._J = H, J
        return self._H

    def _inner_sums(self, J: int, p: float, psi: float) -> np.ndarray:
        """S[u, j] = sum_M P(M | n_u + j) H(m_u | n_u + j, M, n_u)."""
        H = self._survivor_tensor(J)[:, : J + 1, :]
        n_top = int(self.n_u.max(initial=0)) + J
        P = np.exp(allocation_table(self.model, n_top, p, psi))
        rows = P[self.n_u[:, None] + np.arange(J + 1)[None, :]]
        return np.einsum("ujm,ujm->uj", rows, H[:, :, : n_top + 1])

    def per_record(self, params: ModelParams) -> np.ndarray:
        params.check_mortality()
        if self.n_u.size == 0:
            return np.zeros(0)
        disp = params.dispersion(self.model)
        J = deaths_bound(params.lam, params.d, self.eps)
        S = self._inner_sums(J, disp.p, disp.psi)
        w = np.exp(_log_poisson(np.arange(J + 1), params.lam * params.d))
        with np.errstate(divide="ignore"):
            return _log_poisson(self.n_u, params.lam * (1 - params.d)) + np.log(S @ w)

    def __call__(self, params: ModelParams) -> float:
        return float(np.dot(self.count_u, self.per_record(params)))


def primary_loglik(dataset: Dataset, params: ModelParams, model) -> float:
    """sum log P(M_i | N_i) with N observed; no clutch-size or mortality layer."""
    if dataset.C == 0:
        return 0.0
    disp = params.dispersion(model)
    table = allocation_table(model, int(dataset.sizes.max()), disp.p, disp.psi)
    return float(table[dataset.sizes, dataset.males].sum())


def dataset_loglik(dataset: Dataset, params: ModelParams, model, eps: float = DEFAULT_EPS) -> float:
    """Observed-data log-likelihood; secondary data are marginalised over (N, M)."""
    if dataset.is_primary:
        return primary_loglik(dataset, params, model)
    if dataset.C == 0:
        return 0.0
    value = SecondaryLikelihood(dataset, model, eps)(params)
    if not math.isfinite(value):
        raise FloatingPointError("dataset has zero likelihood at these parameters")
    return value


def complete_data_logposterior(
    dataset: Dataset, latents, params: ModelParams, model, priors: PriorConfig
) -> float:
    """log pi(theta, N, M | D) up to the evidence.

    ``latents`` is an (N, M) pair of arrays; ignored for primary data, where
    the observed counts play that role.
    """
    model = AllocationModel.parse(model)
    lp = log_prior(params, model, priors, primary=dataset.is_primary)
    if not math.isfinite(lp):
        return -math.inf
    if dataset.is_primary:
        return lp + primary_loglik(dataset, params, model)
    N, M = (np.asarray(x, np.int64) for x in latents)
    n, m = dataset.sizes, dataset.males
    if N.shape != n.shape or M.shape != n.shape:
        raise ValueError("latent vectors must have one entry per clutch")
    for i in range(n.size):
        if not is_feasible(N[i], M[i], n[i], m[i]):
            return -math.inf
    disp = params.dispersion(model)
    total = lp
    for i in range(n.size):
        total += float(_log_poisson(N[i], params.lam))
        total += log_pmf_allocation(model, N[i], M[i], disp)
        total += stats.binom.logpmf(n[i], N[i], 1.0 - params.d)
        total += float(survivor_logpmf(N[i], M[i], n[i], m[i]))
    return float(total)


# --- tensor-grid evaluation (quadrature oracle) ---------------------------


def secondary_loglik_grid(
    dataset: Dataset, model, p, psi, lam, d, eps: float = DEFAULT_EPS, chunk: int = 256
) -> np.ndarray:
    """log-likelihood on the tensor grid p x psi x lam x d, shape (len p, len psi, len lam, len d)."""
    lik = SecondaryLikelihood(dataset, model, eps)
    p, psi, lam, d = (np.atleast_1d(np.asarray(x, float)) for x in (p, psi, lam, d))
    out = np.zeros((p.size, psi.size, lam.size, d.size))
    if lik.n_u.size == 0:
        return out
    J = poisson_truncation_bound(float(lam.max() * d.max()), eps)
    LL, DD = np.meshgrid(lam, d, indexing="ij")
    mu_dead = (LL * DD).ravel()
    W = np.exp(_log_poisson(np.arange(J + 1)[None, :], mu_dead[:, None]))  # (G2, J+1)
    pre = _log_poisson(lik.n_u[None, :], (LL * (1 - DD)).ravel()[:, None])  # (G2, U)
    pre_sum = pre @ lik.count_u
    for a, pa in enumerate(p):
        for b, sb in enumerate(psi):
            S = lik._inner_sums(J, pa, sb)  # (U, J+1)
            res = np.empty(mu_dead.size)
            for lo in range(0, mu_dead.size, chunk):
                inner = W[lo : lo + chunk] @ S.T  # (g, U)
                with np.errstate(divide="ignore"):
                    res[lo : lo + chunk] = np.log(inner) @ lik.count_u
            out[a, b] = (res + pre_sum).reshape(lam.size, d.size)
    return out
