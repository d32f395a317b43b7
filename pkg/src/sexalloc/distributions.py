"""Sex-allocation and mortality distributions.

Three allocation models for the number of male eggs M in a clutch of N eggs:

* binomial: M ~ Bin(N, p)
* multiplicative binomial (Altham): kernel C(N, M) p^M (1-p)^(N-M) exp(psi M (N-M))
* double binomial (Efron): kernel
  C(N, M) N^(N psi) p^(M(psi+1)) (1-p)^((N-M)(psi+1)) / (M^(M psi) (N-M)^((N-M) psi))

Both generalised models reduce to the binomial at psi = 0; psi > 0 gives
under-dispersion and psi < 0 over-dispersion. The support is finite, so the
normalising constant is obtained by summing the kernel in log space.

Mortality: every egg independently dies with probability d.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp, xlogy

MAX_CLUTCH = 10_000


class AllocationModel(str, enum.Enum):
    BINOMIAL = "binomial"
    MULTIPLICATIVE = "mult"
    DOUBLE = "double"

    @classmethod
    def parse(cls, value) -> "AllocationModel":
        if isinstance(value, cls):
            return value
        aliases = {
            "binomial": cls.BINOMIAL,
            "bin": cls.BINOMIAL,
            "mult": cls.MULTIPLICATIVE,
            "multiplicative": cls.MULTIPLICATIVE,
            "double": cls.DOUBLE,
        }
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown allocation model {value!r}") from None

    @property
    def code(self) -> int:
        """Integer tag used by the compiled sampler."""
        return {"binomial": 0, "mult": 1, "double": 2}[self.value]

    @property
    def has_psi(self) -> bool:
        return self is not AllocationModel.BINOMIAL


@dataclass(frozen=True)
class DispersionParams:
    p: float
    psi: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.p) and 0.0 < self.p < 1.0):
            raise ValueError(f"p must lie in (0, 1), got {self.p}")
        if not math.isfinite(self.psi):
            raise ValueError(f"psi must be finite, got {self.psi}")


def _check_N(N) -> int:
    if int(N) != N or N < 0:
        raise ValueError(f"clutch size must be a non-negative integer, got {N}")
    if N > MAX_CLUTCH:
        raise ValueError(f"clutch size {N} exceeds supported maximum {MAX_CLUTCH}")
    return int(N)


def log_kernel(model, N, M, p: float, psi: float = 0.0):
    """Unnormalised log mass of M males in N eggs (broadcasts over N, M)."""
    model = AllocationModel.parse(model)
    N = np.asarray(N, dtype=float)
    M = np.asarray(M, dtype=float)
    F = N - M
    out = gammaln(N + 1) - gammaln(M + 1) - gammaln(F + 1)
    binom_part = M * math.log(p) + F * math.log1p(-p)
    if model is AllocationModel.BINOMIAL or psi == 0.0:
        return out + binom_part
    if model is AllocationModel.MULTIPLICATIVE:
        return out + binom_part + psi * M * F
    # 0^0 = 1 through xlogy(0, 0) = 0
    return out + (psi + 1.0) * binom_part + psi * (xlogy(N, N) - xlogy(M, M) - xlogy(F, F))


def log_normalizing_constant(model, N, params: DispersionParams) -> float:
    """log c with c = 1 / sum_M kernel(M); depends on N as well as (p, psi)."""
    model = AllocationModel.parse(model)
    N = _check_N(N)
    if model is AllocationModel.BINOMIAL or params.psi == 0.0:
        return 0.0
    ker = log_kernel(model, N, np.arange(N + 1), params.p, params.psi)
    return -float(logsumexp(ker))


def normalizing_constant(model, N, params: DispersionParams) -> float:
    return math.exp(log_normalizing_constant(model, N, params))


def allocation_logpmf(model, N, params: DispersionParams) -> np.ndarray:
    """log P(M | N) for M = 0..N."""
    model = AllocationModel.parse(model)
    N = _check_N(N)
    ker = log_kernel(model, N, np.arange(N + 1), params.p, params.psi)
    if model is AllocationModel.BINOMIAL or params.psi == 0.0:
        return ker
    return ker - logsumexp(ker)


def allocation_pmf(model, N, params: DispersionParams) -> np.ndarray:
    return np.exp(allocation_logpmf(model, N, params))


def log_pmf_allocation(model, N, M, params: DispersionParams) -> float:
    """log P(M | N, p, psi) under ``model``."""
    N = _check_N(N)
    if int(M) != M or not 0 <= M <= N:
        raise ValueError(f"infeasible allocation M={M} for N={N}")
    return float(allocation_logpmf(model, N, params)[int(M)])


def allocation_table(model, n_max: int, p: float, psi: float) -> np.ndarray:
    """Lower-triangular table of log P(M | N) for N, M in 0..n_max (-inf above diagonal).

    One table per (p, psi) replaces repeated normalising-constant evaluations.
    """
    model = AllocationModel.parse(model)
    N = np.arange(n_max + 1)[:, None]
    M = np.arange(n_max + 1)[None, :]
    with np.errstate(invalid="ignore"):
        ker = log_kernel(model, N, np.minimum(M, N), p, psi)
    ker = np.where(M <= N, ker, -np.inf)
    if model is not AllocationModel.BINOMIAL and psi != 0.0:
        ker = ker - logsumexp(ker, axis=1, keepdims=True)
    return ker


def sample_allocation(model, N, params: DispersionParams, rng: np.random.Generator) -> int:
    """Draw M by inverse CDF over {0..N}."""
    N = _check_N(N)
    if N == 0:
        return 0
    cdf = np.cumsum(allocation_pmf(model, N, params))
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), N))


def sample_allocation_many(model, Ns, params: DispersionParams, rng: np.random.Generator) -> np.ndarray:
    """Vectorised inverse-CDF draws, one per entry of ``Ns`` (one uniform each, in order)."""
    Ns = np.asarray(Ns, dtype=np.int64)
    if Ns.size == 0:
        return np.zeros(0, np.int64)
    n_max = int(Ns.max())
    _check_N(n_max)
    cdf = np.cumsum(np.exp(allocation_table(model, n_max, params.p, params.psi)), axis=1)
    rows = cdf[Ns]
    u = rng.random(Ns.size) * rows[np.arange(Ns.size), Ns]
    M = (rows <= u[:, None]).sum(axis=1)
    return np.minimum(M, Ns)


def expected_sex_ratio(model, N, params: DispersionParams) -> float:
    """Exact E[M/N] by summing over the finite support."""
    N = _check_N(N)
    if N == 0:
        raise ValueError("sex ratio undefined for an empty clutch")
    pmf = allocation_pmf(model, N, params)
    return float(np.dot(np.arange(N + 1) / N, pmf))


def allocation_variance(model, N, params: DispersionParams) -> float:
    N = _check_N(N)
    pmf = allocation_pmf(model, N, params)
    M = np.arange(N + 1)
    mean = np.dot(M, pmf)
    return float(np.dot((M - mean) ** 2, pmf))


# --- mortality -----------------------------------------------------------


def _check_feasible(N, M, n, m):
    for name, v in (("N", N), ("M", M), ("n", n), ("m", m)):
        if int(v) != v or v < 0:
            raise ValueError(f"{name} must be a non-negative integer, got {v}")
    if M > N or n > N or m > n:
        raise ValueError(f"counts violate bounds: N={N}, M={M}, n={n}, m={m}")


def is_feasible(N, M, n, m) -> bool:
    """Primary/secondary consistency: N >= n, M >= m, N - n >= M - m, M <= N, m <= n."""
    return N >= n and M >= m and N - n >= M - m and M <= N and m <= n and min(N, M, n, m) >= 0


def survivor_pmf(N: int, M: int, n: int, m: int) -> float:
    """P(m male survivors | N eggs, M male eggs, n survivors).

    Which N - n eggs die is uniform over subsets, giving a hypergeometric law.
    """
    _check_feasible(N, M, n, m)
    N, M, n, m = int(N), int(M), int(n), int(m)
    if m > M or (M - m) > (N - n):
        return 0.0
    return math.comb(M, M - m) * math.comb(N - M, N - n - M + m) / math.comb(N, N - n)


def survivor_logpmf(N, M, n, m):
    """Vectorised log of :func:`survivor_pmf` (no bound checks; -inf when infeasible)."""
    N, M, n, m = np.broadcast_arrays(*(np.asarray(x, float) for x in (N, M, n, m)))
    ok = (m <= M) & (n - m <= N - M) & (M <= N) & (n <= N) & (m >= 0) & (m <= n)
    N, M, n, m = (np.where(ok, x, 0.0) for x in (N, M, n, m))
    out = _log_comb(M, m) + _log_comb(N - M, n - m) - _log_comb(N, n)
    return np.where(ok, out, -np.inf)


def _log_comb(a, b):
    return gammaln(a + 1) - gammaln(b + 1) - gammaln(a - b + 1)


def sample_mortality(N: int, M: int, d: float, rng: np.random.Generator) -> tuple[int, int]:
    """Each egg survives independently with probability 1 - d; returns (n, m)."""
    if not 0.0 <= d <= 1.0:
        raise ValueError(f"mortality rate must lie in [0, 1], got {d}")
    if not 0 <= M <= N:
        raise ValueError(f"infeasible clutch N={N}, M={M}")
    male_survivors = int(rng.binomial(M, 1.0 - d))
    female_survivors = int(rng.binomial(N - M, 1.0 - d))
    return male_survivors + female_survivors, male_survivors


def poisson_truncation_bound(lam: float, eps: float) -> int:
    """Smallest B with P(X > B) < eps for X ~ Poisson(lam)."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if lam < 0 or not math.isfinite(lam):
        raise ValueError(f"lam must be finite and non-negative, got {lam}")
    if lam == 0.0:
        return 0
    B = int(stats.poisson.isf(eps, lam))
    while stats.poisson.sf(B, lam) >= eps:
        B += 1
    while B > 0 and stats.poisson.sf(B - 1, lam) < eps:
        B -= 1
    return B
