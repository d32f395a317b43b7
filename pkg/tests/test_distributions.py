import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sexalloc.distributions import (
    AllocationModel,
    DispersionParams,
    allocation_logpmf,
    allocation_pmf,
    allocation_table,
    allocation_variance,
    expected_sex_ratio,
    is_feasible,
    log_normalizing_constant,
    log_pmf_allocation,
    normalizing_constant,
    poisson_truncation_bound,
    sample_allocation,
    sample_allocation_many,
    sample_mortality,
    survivor_logpmf,
    survivor_pmf,
)

MODELS = list(AllocationModel)
# frozen from a direct float evaluation of the double-binomial kernel, normalised by summation
DOUBLE_10_01_3_M1 = 0.8535397699467686


def direct_kernel(model, N, M, p, psi):
    """Unnormalised kernel written straight from the model definitions (no logs)."""
    F = N - M
    base = math.comb(N, M) * p**M * (1 - p) ** F
    if model is AllocationModel.BINOMIAL:
        return base
    if model is AllocationModel.MULTIPLICATIVE:
        return base * math.exp(psi * M * F)

    def pw(x):
        return x ** (x * psi) if x > 0 else 1.0

    return math.comb(N, M) * N ** (N * psi) * p ** (M * (psi + 1)) * (1 - p) ** (F * (psi + 1)) / (pw(M) * pw(F))


@pytest.mark.parametrize("model", MODELS)
@pytest.mark.parametrize("N", [0, 1, 2, 7, 20, 50])
def test_pmf_normalised(model, N):
    for p in (0.05, 0.3, 0.5, 0.95):
        for psi in (-1.0, -0.3, 0.0, 0.7, 3.0):
            pmf = allocation_pmf(model, N, DispersionParams(p, psi))
            assert abs(pmf.sum() - 1) < 1e-12


@pytest.mark.parametrize("model", [AllocationModel.MULTIPLICATIVE, AllocationModel.DOUBLE])
def test_psi_zero_reduces_to_binomial(model):
    for N in range(0, 31):
        for p in (0.1, 0.5, 0.77):
            a = allocation_logpmf(model, N, DispersionParams(p, 0.0))
            b = stats.binom.logpmf(np.arange(N + 1), N, p)
            assert np.max(np.abs(a - b)) < 1e-12


def test_printed_probabilities():
    assert allocation_pmf("binomial", 10, DispersionParams(0.1))[1] == pytest.approx(0.387420489, abs=1e-9)
    value = allocation_pmf("double", 10, DispersionParams(0.1, 3.0))[1]
    assert value == pytest.approx(DOUBLE_10_01_3_M1, abs=1e-12)
    assert abs(value - 0.85) <= 0.005


def test_double_brute_force_normalisation():
    N, p, psi = 5, 0.3, 0.7
    ker = [direct_kernel(AllocationModel.DOUBLE, N, M, p, psi) for M in range(N + 1)]
    expected = np.array(ker) / sum(ker)
    got = allocation_pmf("double", N, DispersionParams(p, psi))
    np.testing.assert_allclose(got, expected, rtol=1e-12)


def test_normalising_constant_by_hand():
    c = normalizing_constant("mult", 2, DispersionParams(0.5, math.log(2)))
    assert c == pytest.approx(2 / 3, rel=1e-14)
    for model in MODELS:
        assert normalizing_constant(model, 9, DispersionParams(0.4, 0.0)) == 1.0


def test_large_clutch_log_space_stable():
    lc = log_normalizing_constant("mult", 2000, DispersionParams(0.5, 2.0))
    assert math.isfinite(lc)
    assert abs(allocation_pmf("double", 3000, DispersionParams(0.2, -0.5)).sum() - 1) < 1e-10


def test_log_pmf_errors():
    with pytest.raises(ValueError):
        log_pmf_allocation("binomial", 3, 4, DispersionParams(0.5))
    with pytest.raises(ValueError):
        DispersionParams(1.0)
    with pytest.raises(ValueError):
        DispersionParams(0.5, float("inf"))
    assert log_pmf_allocation("double", 0, 0, DispersionParams(0.3, 2.0)) == 0.0


def test_model_parse():
    assert AllocationModel.parse("multiplicative") is AllocationModel.MULTIPLICATIVE
    assert not AllocationModel.BINOMIAL.has_psi
    with pytest.raises(ValueError):
        AllocationModel.parse("poisson")


def test_allocation_table_matches_rows():
    table = allocation_table("double", 12, 0.35, 0.8)
    for N in range(13):
        np.testing.assert_allclose(table[N, : N + 1], allocation_logpmf("double", N, DispersionParams(0.35, 0.8)))
        assert np.all(np.isneginf(table[N, N + 1 :]))


# --- sampling ------------------------------------------------------------------


def test_sample_empty_clutch(rng):
    assert all(sample_allocation("mult", 0, DispersionParams(0.3, 1.0), rng) == 0 for _ in range(20))


def test_sample_binomial_mean(rng):
    draws = sample_allocation_many("binomial", np.full(100_000, 10), DispersionParams(0.5), rng)
    se = math.sqrt(2.5 / draws.size)
    assert abs(draws.mean() - 5) < 3 * se


def test_sample_double_frequency(rng):
    draws = sample_allocation_many("double", np.full(100_000, 10), DispersionParams(0.1, 3.0), rng)
    freq = np.mean(draws == 1)
    se = math.sqrt(DOUBLE_10_01_3_M1 * (1 - DOUBLE_10_01_3_M1) / draws.size)
    assert abs(freq - DOUBLE_10_01_3_M1) < 3 * se


@pytest.mark.parametrize(
    "model,N,p,psi",
    [("binomial", 8, 0.3, 0.0), ("mult", 12, 0.2, 0.4), ("double", 9, 0.6, -0.5), ("double", 10, 0.1, 3.0)],
)
def test_sampler_chi_square(model, N, p, psi, rng):
    params = DispersionParams(p, psi)
    draws = sample_allocation_many(model, np.full(100_000, N), params, rng)
    expected = allocation_pmf(model, N, params) * draws.size
    observed = np.bincount(draws, minlength=N + 1)
    keep = expected >= 5
    obs = np.append(observed[keep], observed[~keep].sum())
    exp = np.append(expected[keep], expected[~keep].sum())
    if exp[-1] < 5:
        obs, exp = obs[:-1], exp[:-1]
        exp = exp * obs.sum() / exp.sum()
    assert stats.chisquare(obs, exp).pvalue > 0.01


def test_single_draw_sampler_matches_vectorised_law(rng):
    params = DispersionParams(0.25, 0.6)
    draws = np.array([sample_allocation("mult", 6, params, rng) for _ in range(20_000)])
    expected = allocation_pmf("mult", 6, params) * draws.size
    assert stats.chisquare(np.bincount(draws, minlength=7), expected).pvalue > 0.01


def test_sampler_determinism():
    params = DispersionParams(0.4, 0.9)
    a = sample_allocation_many("double", np.arange(30), params, np.random.default_rng(5))
    b = sample_allocation_many("double", np.arange(30), params, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


# --- moments ------------------------------------------------------------------


def test_expected_sex_ratio():
    for model in MODELS:
        assert expected_sex_ratio(model, 11, DispersionParams(0.37, 0.0)) == pytest.approx(0.37, abs=1e-14)
        params = DispersionParams(0.2, 0.8)
        assert expected_sex_ratio(model, 1, params) == pytest.approx(allocation_pmf(model, 1, params)[1])
    with pytest.raises(ValueError):
        expected_sex_ratio("mult", 0, DispersionParams(0.5, 1.0))


def test_expected_sex_ratio_monte_carlo(rng):
    params = DispersionParams(0.1, 0.3)
    exact = expected_sex_ratio("mult", 10, params)
    assert abs(exact - 0.1) > 0.01
    draws = sample_allocation_many("mult", np.full(1_000_000, 10), params, rng) / 10
    assert abs(draws.mean() - exact) < 3 * draws.std() / 1000


@pytest.mark.parametrize("model", [AllocationModel.MULTIPLICATIVE, AllocationModel.DOUBLE])
def test_dispersion_direction(model):
    N = 10
    for p in (0.1, 0.3, 0.5, 0.8):
        for psi, under in ((0.5, True), (1.5, True), (-0.3, False)):
            params = DispersionParams(p, psi)
            mean = expected_sex_ratio(model, N, params)
            binom_var = N * mean * (1 - mean)
            var = allocation_variance(model, N, params)
            assert (var < binom_var) == under


# --- mortality ------------------------------------------------------------------


def enumerate_survivors(N, M, n):
    """P(m | N, M, n) by listing every set of N - n dead eggs (eggs 0..M-1 are male)."""
    counts = {}
    subsets = list(itertools.combinations(range(N), N - n))
    for dead in subsets:
        m = M - sum(1 for e in dead if e < M)
        counts[m] = counts.get(m, 0) + 1
    return {m: Fraction(c, len(subsets)) for m, c in counts.items()}


def test_survivor_pmf_matches_enumeration_exactly():
    for N in range(0, 9):
        for M in range(N + 1):
            for n in range(N + 1):
                exact = enumerate_survivors(N, M, n)
                for m in range(n + 1):
                    if not is_feasible(N, M, n, m):
                        continue
                    assert survivor_pmf(N, M, n, m) == float(exact.get(m, Fraction(0)))


def test_survivor_examples():
    assert survivor_pmf(4, 2, 2, 1) == pytest.approx(2 / 3)
    assert survivor_pmf(6, 3, 6, 3) == 1.0
    for n in range(5):
        assert survivor_pmf(4, 0, n, 0) == 1.0
    assert survivor_pmf(5, 4, 3, 0) == 0.0  # within bounds but impossible: at most two deaths
    with pytest.raises(ValueError):
        survivor_pmf(3, 4, 2, 1)
    with pytest.raises(ValueError):
        survivor_pmf(5, 2, 6, 1)


def test_survivor_logpmf_vectorised():
    m = np.arange(0, 4)
    np.testing.assert_allclose(np.exp(survivor_logpmf(7, 3, 4, m)), [survivor_pmf(7, 3, 4, k) for k in m])


def test_sample_mortality_extremes(rng):
    assert sample_mortality(9, 4, 0.0, rng) == (9, 4)
    assert sample_mortality(9, 4, 1.0, rng) == (0, 0)
    with pytest.raises(ValueError):
        sample_mortality(3, 1, 1.5, rng)


def test_sample_mortality_conditional_frequency(rng):
    hits = total = 0
    for _ in range(100_000):
        n, m = sample_mortality(4, 2, 0.5, rng)
        if n == 2:
            total += 1
            hits += m == 1
    freq = hits / total
    assert abs(freq - 2 / 3) < 3 * math.sqrt(2 / 9 / total)


# --- truncation ------------------------------------------------------------------


def test_truncation_bound_tail():
    B = poisson_truncation_bound(10.0, 1e-10)
    tail = 1 - sum(stats.poisson.pmf(k, 10.0) for k in range(B + 1))
    upper = sum(stats.poisson.pmf(k, 10.0) for k in range(B + 1, B + 200))
    assert upper < 1e-10
    assert sum(stats.poisson.pmf(k, 10.0) for k in range(B, B + 200)) >= 1e-10
    assert tail < 1e-9
    assert poisson_truncation_bound(0.5, 0.99) <= 1
    assert poisson_truncation_bound(0.0, 1e-10) == 0


@settings(max_examples=60, deadline=None)
@given(
    lam=st.floats(0.01, 200.0),
    lam2=st.floats(0.01, 200.0),
    e1=st.floats(1e-14, 0.5),
    e2=st.floats(1e-14, 0.5),
)
def test_truncation_bound_monotone(lam, lam2, e1, e2):
    lo, hi = sorted((lam, lam2))
    big, small = sorted((e1, e2), reverse=True)
    assert poisson_truncation_bound(lo, small) <= poisson_truncation_bound(hi, small)
    assert poisson_truncation_bound(lo, big) <= poisson_truncation_bound(lo, small)


@settings(max_examples=80, deadline=None)
@given(
    model=st.sampled_from(MODELS),
    N=st.integers(0, 60),
    p=st.floats(0.01, 0.99),
    psi=st.floats(-2.0, 3.0),
)
def test_pmf_property(model, N, p, psi):
    pmf = allocation_pmf(model, N, DispersionParams(p, psi))
    assert np.all(pmf >= 0)
    assert abs(pmf.sum() - 1) < 1e-12
    if N <= 20:
        ker = np.array([direct_kernel(model, N, M, p, psi) for M in range(N + 1)])
        if np.all(np.isfinite(ker)) and ker.sum() > 0:
            np.testing.assert_allclose(pmf, ker / ker.sum(), rtol=1e-9, atol=1e-300)
