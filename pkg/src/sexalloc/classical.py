"""Classical dispersion tests for clutch sex-ratio data.

All statistics operate on the observed (size, males) columns of a dataset, so
they apply equally to primary data and to secondary data treated as if it
were primary. The ``*_batch`` functions evaluate many replicate datasets at
once; the single-dataset API is a batch of one.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from .data import Dataset


class Direction(str, enum.Enum):
    UNDER = "UnderDispersed"
    OVER = "OverDispersed"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class SizeGroup:
    k: int
    counts: tuple[int, ...]

    @property
    def v(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def sample_variance(self) -> float:
        if self.v < 2:
            return float("nan")
        return float(np.var(self.counts, ddof=1))

    @property
    def sex_ratio(self) -> float:
        if self.k == 0:
            return float("nan")
        return self.total / (self.k * self.v)


@dataclass(frozen=True)
class GroupStatistic:
    k: int
    v: int
    total: int
    U: float | None
    excluded: bool


@dataclass(frozen=True)
class ClassicalTestReport:
    test: str
    statistic: float | None
    p_value: float | None
    direction: Direction
    per_group: list[GroupStatistic] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "test": self.test,
            "U": self.statistic,
            "p_value": self.p_value,
            "direction": self.direction.value,
            "per_group": [
                {"k": g.k, "v": g.v, "T": g.total, "U_k": g.U, "excluded": g.excluded}
                for g in self.per_group
            ],
        }


def _direction(U) -> Direction:
    if U is None or not np.isfinite(U):
        return Direction.INDETERMINATE
    if U < 0:
        return Direction.UNDER
    if U > 0:
        return Direction.OVER
    return Direction.INDETERMINATE


def _two_sided(U):
    return 2.0 * stats.norm.sf(np.abs(U))


def group_by_clutch_size(dataset: Dataset) -> list[SizeGroup]:
    if dataset.C == 0:
        raise ValueError("cannot group an empty dataset")
    groups = []
    for k in np.unique(dataset.sizes):
        counts = dataset.males[dataset.sizes == k]
        groups.append(SizeGroup(int(k), tuple(int(c) for c in counts)))
    return groups


# --- Meelis ---------------------------------------------------------------


def _falling(x, r):
    out = 1
    for i in range(r):
        out *= x - i
    return out


def meelis_null_moments(v: int, k: int, T: int) -> tuple[Fraction, Fraction]:
    """Exact conditional mean and variance of sum(m_i^2) for one size group.

    Given T males among v clutches of k eggs, the counts are multivariate
    hypergeometric, with factorial moments
    E[m_i^(r) m_j^(s)] = k^(r) k^(s) T^(r+s) / K^(r+s), K = vk.
    """
    K = v * k

    def ratio(r):
        den = _falling(K, r)
        return Fraction(_falling(T, r), den) if den else Fraction(0)

    k2, k3, k4 = _falling(k, 2), _falling(k, 3), _falling(k, 4)
    mean_f2 = k2 * ratio(2)
    # (x^(2))^2 = x^(4) + 4 x^(3) + 2 x^(2)
    second_f2 = k4 * ratio(4) + 4 * k3 * ratio(3) + 2 * k2 * ratio(2)
    cross = k2 * k2 * ratio(4)
    E0 = T + v * mean_f2
    var0 = v * second_f2 + v * (v - 1) * cross - (v * mean_f2) ** 2
    return E0, var0


def _falling_arr(x, r):
    out = np.ones_like(x, dtype=float)
    for i in range(r):
        out = out * (x - i)
    return out


def _meelis_moments_arr(v, k, T):
    v = v.astype(float)
    k = k.astype(float)
    T = T.astype(float)
    K = v * k

    def ratio(r):
        den = _falling_arr(K, r)
        num = _falling_arr(T, r)
        safe = np.where(den != 0, den, 1.0)
        return np.where(den != 0, num / safe, 0.0)

    k2, k3, k4 = _falling_arr(k, 2), _falling_arr(k, 3), _falling_arr(k, 4)
    r2, r4 = ratio(2), ratio(4)
    mean_f2 = k2 * r2
    second_f2 = k4 * r4 + 4 * k3 * ratio(3) + 2 * k2 * r2
    E0 = T + v * mean_f2
    var0 = v * second_f2 + v * (v - 1) * k2 * k2 * r4 - (v * mean_f2) ** 2
    return E0, var0


def _group_sums(rep, sizes, males, n_reps):
    """Per (replicate, size) sums: keys, v, T, sum m^2."""
    kmax = int(sizes.max()) + 1 if sizes.size else 1
    key = rep.astype(np.int64) * kmax + sizes
    length = n_reps * kmax
    v = np.bincount(key, minlength=length)
    T = np.bincount(key, weights=males, minlength=length)
    S2 = np.bincount(key, weights=males.astype(float) ** 2, minlength=length)
    present = np.flatnonzero(v)
    return present // kmax, present % kmax, v[present], T[present].round().astype(np.int64), S2[present]


def meelis_batch(rep, sizes, males, n_reps):
    """Meelis U and two-sided p-values for ``n_reps`` stacked datasets.

    ``rep[i]`` is the replicate index of clutch i. Returns (U, p, n_groups);
    U and p are NaN where every size group is degenerate.
    """
    rep = np.asarray(rep, np.int64)
    sizes = np.asarray(sizes, np.int64)
    males = np.asarray(males, np.int64)
    g_rep, k, v, T, S2 = _group_sums(rep, sizes, males, n_reps)
    E0, var0 = _meelis_moments_arr(v, k, T)
    ok = (v >= 2) & (k >= 2) & (T > 0) & (T < v * k) & (var0 > 1e-12)
    Uk = np.where(ok, (S2 - E0) / np.sqrt(np.where(ok, var0, 1.0)), 0.0)
    total = np.bincount(g_rep, weights=Uk, minlength=n_reps)
    count = np.bincount(g_rep, weights=ok, minlength=n_reps)
    with np.errstate(invalid="ignore", divide="ignore"):
        U = np.where(count > 0, total / np.sqrt(count), np.nan)
    return U, _two_sided(U), count.astype(np.int64)


def meelis_test(dataset: Dataset) -> ClassicalTestReport:
    """Meelis conditional test of binomial dispersion.

    Per size group, U_k standardises sum(m_i^2) by its exact null moments given
    the group total; U = sum(U_k) / sqrt(#groups). Degenerate groups (v = 1,
    k < 2, all-female or all-male) have zero null variance and are left out
    of both the sum and the group count.
    """
    groups = group_by_clutch_size(dataset)
    per_group = []
    included = []
    for g in groups:
        E0, var0 = meelis_null_moments(g.v, g.k, g.total)
        if g.v < 2 or g.k < 2 or g.total == 0 or g.total == g.v * g.k or var0 <= 0:
            per_group.append(GroupStatistic(g.k, g.v, g.total, None, True))
            continue
        s2 = sum(c * c for c in g.counts)
        Uk = float((s2 - E0) / np.sqrt(float(var0)))
        per_group.append(GroupStatistic(g.k, g.v, g.total, Uk, False))
        included.append(Uk)
    if not included:
        return ClassicalTestReport("meelis", None, None, Direction.INDETERMINATE, per_group)
    U = float(np.sum(included) / np.sqrt(len(included)))
    return ClassicalTestReport("meelis", U, float(_two_sided(U)), _direction(U), per_group)


# --- James ----------------------------------------------------------------


def _james_moment_sums(rep, sizes, n_reps):
    n = sizes.astype(float)
    a = n - 1
    b = n * a
    n3 = _falling_arr(n, 3)
    n4 = _falling_arr(n, 4)

    def s(w):
        return np.bincount(rep, weights=w, minlength=n_reps)

    return s(n), s(b), s(b * b), s(a * a * n), s((a * a - 4 * a + 2) * b), s((4 - 2 * a) * n3), s(n4)


def _james_moments(K, T, B, Q, S1, S2, S3, S4):
    def ratio(r):
        den = _falling_arr(K, r)
        return np.where(den != 0, _falling_arr(T, r) / np.where(den != 0, den, 1.0), 0.0)

    R1, R2, R3, R4 = ratio(1), ratio(2), ratio(3), ratio(4)
    mean = B * (R1 - R2)
    diag = S1 * R1 + S2 * R2 + S3 * R3 + S4 * R4
    var = diag + (B * B - Q) * (R2 - 2 * R3 + R4) - mean**2
    return mean, var


def james_null_moments(sizes, total: int) -> tuple[float, float]:
    """Exact mean and variance of W = sum m_i (n_i - m_i) given the male total.

    Under the null the T males occupy a uniformly random T-subset of the
    K = sum(n_i) eggs, so E[m_i^(r) m_j^(s)] = n_i^(r) n_j^(s) T^(r+s) / K^(r+s).
    Write W = sum (n_i - 1) m_i - sum m_i^(2) and expand.
    """
    sizes = np.asarray(sizes, np.int64)
    sums = _james_moment_sums(np.zeros(sizes.size, np.int64), sizes, 1)
    mean, var = _james_moments(sums[0], np.array([float(total)]), *sums[1:])
    return float(mean[0]), float(var[0])


def james_batch(rep, sizes, males, n_reps):
    rep = np.asarray(rep, np.int64)
    sizes = np.asarray(sizes, np.int64)
    males = np.asarray(males, np.int64)
    K, B, Q, S1, S2, S3, S4 = _james_moment_sums(rep, sizes, n_reps)
    T = np.bincount(rep, weights=males, minlength=n_reps)
    w_obs = np.bincount(rep, weights=(males * (sizes - males)).astype(float), minlength=n_reps)
    mean, var = _james_moments(K, T, B, Q, S1, S2, S3, S4)
    ok = (K >= 2) & (T > 0) & (T < K) & (var > 1e-12)
    with np.errstate(invalid="ignore", divide="ignore"):
        U = np.where(ok, (mean - w_obs) / np.sqrt(np.where(ok, var, 1.0)), np.nan)
    return U, _two_sided(U)


def james_test(dataset: Dataset) -> ClassicalTestReport:
    """Pair-count dispersion test for unequal clutch sizes.

    W counts within-clutch male-female pairs; it is standardised by its exact
    null moments given the total number of males. Negative U means more mixed
    clutches than binomial, i.e. under-dispersion.
    """
    if dataset.C == 0:
        raise ValueError("empty dataset")
    U, p = james_batch(np.zeros(dataset.C, np.int64), dataset.sizes, dataset.males, 1)
    if not np.isfinite(U[0]):
        return ClassicalTestReport("james", None, None, Direction.INDETERMINATE)
    return ClassicalTestReport("james", float(U[0]), float(p[0]), _direction(U[0]))


# --- descriptive ratios ----------------------------------------------------


def dispersion_ratio_batch(rep, sizes, males, n_reps):
    rep = np.asarray(rep, np.int64)
    sizes = np.asarray(sizes, np.int64)
    males = np.asarray(males, np.int64)
    g_rep, k, v, T, S2 = _group_sums(rep, sizes, males, n_reps)
    use = v >= 2
    vf = v.astype(float)
    s2 = np.where(use, (S2 - T.astype(float) ** 2 / vf) / np.maximum(vf - 1, 1), 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        p_k = np.where(k > 0, T / (k * vf), 0.0)
    num = np.bincount(g_rep, weights=np.where(use, vf * s2, 0.0), minlength=n_reps)
    den = np.bincount(g_rep, weights=np.where(use, vf * k * p_k * (1 - p_k), 0.0), minlength=n_reps)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / den, np.nan)


def dispersion_ratio(dataset: Dataset) -> float:
    """Observed over binomial variance of male counts, pooled across size groups.

    Within-group variances use the v_k - 1 divisor; singleton groups are skipped.
    """
    if dataset.C == 0:
        raise ValueError("empty dataset")
    R = dispersion_ratio_batch(np.zeros(dataset.C, np.int64), dataset.sizes, dataset.males, 1)[0]
    if not np.isfinite(R):
        raise ValueError("R undefined: no size group with v >= 2 and mixed sexes")
    return float(R)


def mccullagh_batch(rep, sizes, males, n_reps):
    rep = np.asarray(rep, np.int64)
    sizes = np.asarray(sizes, np.float64)
    males = np.asarray(males, np.float64)
    keep = sizes > 0
    rep, sizes, males = rep[keep], sizes[keep], males[keep]
    C = np.bincount(rep, minlength=n_reps)
    tot_n = np.bincount(rep, weights=sizes, minlength=n_reps)
    tot_m = np.bincount(rep, weights=males, minlength=n_reps)
    with np.errstate(invalid="ignore", divide="ignore"):
        p_hat = tot_m / tot_n
        ph = p_hat[rep]
        terms = (males - ph * sizes) ** 2 / (sizes * ph * (1 - ph))
        s2 = np.bincount(rep, weights=terms, minlength=n_reps) / (C - 1)
    ok = (C >= 2) & (tot_m > 0) & (tot_m < tot_n)
    return np.where(ok, s2, np.nan)


def mccullagh_dispersion(dataset: Dataset) -> float:
    """Sum-of-ratios dispersion estimate s^2 (clutches with n = 0 are dropped)."""
    if np.any(dataset.sizes == 0):
        warnings.warn("dropping clutches of size 0", stacklevel=2)
    s2 = mccullagh_batch(np.zeros(dataset.C, np.int64), dataset.sizes, dataset.males, 1)[0]
    if not np.isfinite(s2):
        raise ValueError("s^2 undefined: need C >= 2 and a pooled sex ratio strictly inside (0, 1)")
    return float(s2)


def classical_summary(dataset: Dataset) -> dict:
    """All four classical statistics; undefined quantities are reported as None."""
    out = {"meelis": meelis_test(dataset).to_dict(), "james": james_test(dataset).to_dict()}
    for name, fn in (("R", dispersion_ratio), ("s2", mccullagh_dispersion)):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                out[name] = fn(dataset)
        except ValueError:
            out[name] = None
    return out
