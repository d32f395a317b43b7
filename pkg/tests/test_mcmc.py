import math
import warnings

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import cumulative_trapezoid

from sexalloc.data import PRIMARY, Dataset
from sexalloc.distributions import allocation_table
from sexalloc.likelihood import ModelParams, PriorConfig, complete_data_logposterior
from sexalloc.mcmc import (
    ChainState,
    McmcConfig,
    PosteriorSamples,
    effective_sample_size,
    equi_tailed_interval,
    gibbs_update_d,
    gibbs_update_lambda,
    init_chain,
    posterior_predictive_allocation,
    recompute_log_post,
    run_chain,
    run_collapsed_chain,
    summarize_posterior,
    update_latents,
    update_p,
    update_psi,
)
from sexalloc.simulation import GeneratorSpec, simulate_dataset
from sexalloc.streams import stream

KS_ALPHA = 0.01


def fixed_state(N, M, p=0.3, psi=0.0, lam=5.0, d=0.2):
    return ChainState(ModelParams(p, psi, lam, d), np.asarray(N, np.int64), np.asarray(M, np.int64))


def grid_cdf(logdens, lo, hi, n=20_001):
    x = np.linspace(lo, hi, n)
    y = np.exp(logdens(x) - np.max(logdens(x)))
    c = cumulative_trapezoid(y, x, initial=0.0)
    return lambda q: np.interp(q, x, c / c[-1])


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(iterations=0),
        dict(iterations=10, burn_in=10),
        dict(burn_in=-1),
        dict(thin=0),
        dict(latent_step=0),
        dict(proposal_scale_p=0.0),
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        McmcConfig(**kwargs)


def test_config_draw_count():
    assert McmcConfig(iterations=1000, burn_in=100, thin=7).n_draws == 128
    assert McmcConfig().n_draws == 90_000


def test_init_chain_is_feasible(small_secondary, priors):
    state = init_chain(small_secondary, "mult", priors)
    assert np.all(state.N >= small_secondary.sizes)
    assert np.all(state.M >= small_secondary.males)
    assert np.all(state.N - state.M >= small_secondary.sizes - small_secondary.males)
    assert math.isfinite(state.log_post)
    assert state.log_post == pytest.approx(recompute_log_post(state.copy(), small_secondary, "mult", priors))


def test_init_chain_tiny_mortality_prior(small_secondary):
    priors = PriorConfig(lam_shape=5.0, lam_rate=1.0, d_a=1e-3, d_b=50.0)
    state = init_chain(small_secondary, "binomial", priors)
    np.testing.assert_array_equal(state.N, small_secondary.sizes)
    np.testing.assert_array_equal(state.M, small_secondary.males)


def test_init_chain_rejects_all_zero(priors):
    with pytest.raises(ValueError, match="no surviving"):
        init_chain(Dataset.from_pairs([(0, 0), (0, 0)]), "binomial", priors)
    with pytest.raises(ValueError):
        init_chain(Dataset.from_pairs([(3, 1)]), "binomial", PriorConfig())


def test_gibbs_lambda_law(priors, rng):
    state = fixed_state([4, 7, 2, 9], [1, 2, 0, 3])
    draws = np.array([gibbs_update_lambda(state, priors, rng) for _ in range(4000)])
    law = stats.gamma(priors.lam_shape + 22, scale=1 / (priors.lam_rate + 4))
    assert stats.kstest(draws, law.cdf).pvalue > KS_ALPHA


def test_gibbs_d_law(priors, rng):
    data = Dataset.from_pairs([(3, 1), (5, 2), (2, 0), (6, 3)])
    state = fixed_state([4, 7, 2, 9], [1, 2, 0, 3])
    draws = np.array([gibbs_update_d(state, data, priors, rng) for _ in range(4000)])
    law = stats.beta(priors.d_a + 6, priors.d_b + 16)
    assert stats.kstest(draws, law.cdf).pvalue > KS_ALPHA


def test_gibbs_d_without_deaths_moves_down(priors, rng):
    data = Dataset.from_pairs([(5, 2)] * 20)
    state = fixed_state([5] * 20, [2] * 20)
    draws = np.array([gibbs_update_d(state, data, priors, rng) for _ in range(2000)])
    assert draws.mean() < priors.d_a / (priors.d_a + priors.d_b)


def test_binomial_p_is_conjugate(priors, rng):
    state = fixed_state([4, 7, 2, 9], [1, 2, 0, 3])
    config = McmcConfig(iterations=10, burn_in=0, thin=1)
    draws = np.array([update_p(state, "binomial", priors, config, rng)[0] for _ in range(4000)])
    assert stats.kstest(draws, stats.beta(1 + 6, 1 + 16).cdf).pvalue > KS_ALPHA


@pytest.mark.parametrize("model", ["mult", "double"])
def test_mh_p_targets_conditional(model, priors, rng):
    N, M, psi = np.array([4, 7, 2, 9, 6]), np.array([1, 2, 0, 3, 2]), 0.4
    state = fixed_state(N, M, psi=psi)
    config = McmcConfig(iterations=10, burn_in=0, thin=1)

    def logdens(ps):
        return np.array([allocation_table(model, 9, q, psi)[N, M].sum() for q in ps])

    draws, accepted = [], 0
    for i in range(60_000):
        p, ok = update_p(state, model, priors, config, rng)
        accepted += ok
        if i % 30 == 0:
            draws.append(p)
    assert 0.05 < accepted / 60_000 < 0.95
    cdf = grid_cdf(logdens, 1e-4, 1 - 1e-4, 4001)
    assert stats.kstest(draws, cdf).pvalue > KS_ALPHA


def test_mh_psi_targets_conditional(priors, rng):
    N, M, p = np.array([4, 7, 2, 9, 6]), np.array([2, 3, 1, 5, 3]), 0.45
    state = fixed_state(N, M, p=p)
    config = McmcConfig(iterations=10, burn_in=0, thin=1)

    def logdens(s):
        return np.array([allocation_table("mult", 9, p, v)[N, M].sum() for v in s]) + stats.norm.logpdf(s)

    draws = []
    for i in range(60_000):
        psi, _ = update_psi(state, "mult", priors, config, rng)
        if i % 30 == 0:
            draws.append(psi)
    assert stats.kstest(draws, grid_cdf(logdens, -6, 6, 4001)).pvalue > KS_ALPHA


def test_psi_update_skipped_for_binomial(priors, rng):
    state = fixed_state([4], [1], psi=0.0)
    with pytest.warns(UserWarning, match="no dispersion"):
        psi, ok = update_psi(state, "binomial", priors, McmcConfig(iterations=2, burn_in=0), rng)
    assert psi == 0.0 and ok is None


def test_empty_data_returns_prior(empty_secondary, priors):
    config = McmcConfig(iterations=40_000, burn_in=1000, thin=10, seed=3)
    samples = run_chain(empty_secondary, "mult", priors, config)
    draws = samples.draws
    assert stats.kstest(draws["lam"], stats.gamma(6.0).cdf).pvalue > KS_ALPHA
    assert stats.kstest(draws["d"], stats.beta(2, 8).cdf).pvalue > KS_ALPHA
    assert stats.kstest(draws["p"], stats.uniform.cdf).pvalue > KS_ALPHA
    assert stats.kstest(draws["psi"], stats.norm.cdf).pvalue > KS_ALPHA


def test_primary_binomial_posterior_is_beta(small_primary, priors):
    samples = run_chain(small_primary, "binomial", priors, McmcConfig(iterations=5000, burn_in=100, thin=1, seed=1))
    a = 1 + small_primary.males.sum()
    b = 1 + (small_primary.sizes - small_primary.males).sum()
    assert stats.kstest(samples.draws["p"], stats.beta(a, b).cdf).pvalue > KS_ALPHA
    assert np.all(np.isnan(samples.draws["lam"]))


def test_generalised_with_psi_zero_matches_binomial(small_primary, priors):
    config = McmcConfig(iterations=41_000, burn_in=1000, thin=20, seed=5)
    samples = run_chain(small_primary, "mult", priors, config, fixed={"psi": 0.0})
    a = 1 + small_primary.males.sum()
    b = 1 + (small_primary.sizes - small_primary.males).sum()
    assert np.all(samples.draws["psi"] == 0.0)
    assert stats.kstest(samples.draws["p"], stats.beta(a, b).cdf).pvalue > KS_ALPHA
    assert 0.0 < samples.acceptance["p"] < 1.0


def test_recovers_generating_parameters():
    spec = GeneratorSpec(C=200, lam=10.0, model="mult", p=0.1, psi=0.445, d=0.076, seed=11)
    data = simulate_dataset(spec).secondary
    priors = PriorConfig(sigma_psi=1.0, lam_shape=10.0, lam_rate=1.0, d_a=1.0, d_b=9.0)
    config = McmcConfig(iterations=20_000, burn_in=4000, thin=4, seed=2, latent_step=3)
    samples = run_chain(data, "mult", priors, config)
    summary = summarize_posterior(samples, level=0.99)
    for name in ("p", "psi", "lam", "d"):
        assert summary[name]["lower"] <= getattr(spec, name) <= summary[name]["upper"], name
    for key in ("p", "psi", "latents"):
        assert 0.05 < samples.acceptance[key] < 0.95


def test_latents_stay_feasible(small_secondary, priors):
    config = McmcConfig(iterations=20_000, burn_in=0, thin=10, seed=4)
    samples = run_chain(small_secondary, "double", priors, config, store_latents=True)
    N, M = samples.latents
    n, m = small_secondary.sizes, small_secondary.males
    assert N.shape == (2000, small_secondary.C)
    assert np.all(N >= n) and np.all(M >= m) and np.all(N - M >= n - m)
    assert np.any(N > n)


def test_latent_sweep_keeps_finite_log_posterior(small_secondary, priors, rng):
    state = init_chain(small_secondary, "mult", priors)
    for _ in range(200):
        update_latents(state, small_secondary, "mult", rng, moves=2)
        assert math.isfinite(recompute_log_post(state, small_secondary, "mult", priors))


def test_no_mortality_pins_latents(small_secondary):
    priors = PriorConfig(lam_shape=5.0, lam_rate=1.0, d_a=1e-3, d_b=1e4)
    config = McmcConfig(iterations=3000, burn_in=0, thin=1, seed=8)
    samples = run_chain(small_secondary, "binomial", priors, config, store_latents=True)
    N, _ = samples.latents
    assert np.mean(N == small_secondary.sizes) > 0.999


def test_chains_are_reproducible(small_secondary, priors):
    config = McmcConfig(iterations=3000, burn_in=500, thin=2, seed=9)
    a = run_chain(small_secondary, "mult", priors, config)
    b = run_chain(small_secondary, "mult", priors, config)
    c = run_chain(small_secondary, "mult", priors, config, rng=stream(10, 1))
    for name in ("p", "psi", "lam", "d"):
        np.testing.assert_array_equal(a.draws[name], b.draws[name])
    assert not np.array_equal(a.draws["p"], c.draws["p"])


def test_fixed_parameters_are_held(small_secondary, priors):
    config = McmcConfig(iterations=2000, burn_in=100, thin=1, seed=1)
    samples = run_chain(small_secondary, "mult", priors, config, fixed={"lam": 6.5, "d": 0.25})
    assert np.all(samples.draws["lam"] == 6.5) and np.all(samples.draws["d"] == 0.25)


def test_augmented_and_collapsed_agree(small_secondary, priors):
    aug = run_chain(small_secondary, "mult", priors, McmcConfig(iterations=60_000, burn_in=5000, thin=5, seed=1))
    col = run_collapsed_chain(
        small_secondary, "mult", priors, McmcConfig(iterations=8000, burn_in=1500, thin=1, seed=1)
    )
    for name in ("p", "psi", "lam", "d"):
        a, c = aug.draws[name], col.draws[name]
        se = math.sqrt(a.var() / effective_sample_size(a) + c.var() / effective_sample_size(c))
        assert abs(a.mean() - c.mean()) < 4 * se, name


def _samples(draws, model="mult"):
    draws = {k: np.asarray(v, float) for k, v in draws.items()}
    return PosteriorSamples(model=model, draws=draws, acceptance={}, scales=(0.5, 0.3))


def test_summary_values():
    x = np.arange(1, 1001, dtype=float)
    samples = _samples({"p": x / 1001, "psi": x, "lam": x, "d": x / 1001})
    summary = summarize_posterior(samples, level=0.9)
    assert summary["psi"]["mean"] == pytest.approx(500.5)
    assert summary["psi"]["median"] == pytest.approx(500.5)
    lo, hi = equi_tailed_interval(x, 0.9)
    assert (summary["psi"]["lower"], summary["psi"]["upper"]) == (lo, hi)
    assert lo == pytest.approx(np.quantile(x, 0.05))


def test_summary_errors_and_binomial_omits_psi():
    with pytest.raises(ValueError, match="100 draws"):
        summarize_posterior(_samples({k: np.ones(50) for k in ("p", "psi", "lam", "d")}))
    with pytest.raises(ValueError):
        summarize_posterior(_samples({k: np.ones(500) for k in ("p", "psi", "lam", "d")}), level=1.0)
    samples = _samples({"p": np.full(200, 0.3), "psi": np.zeros(200), "lam": np.full(200, np.nan),
                        "d": np.full(200, np.nan)}, model="binomial")
    assert set(summarize_posterior(samples)) == {"p"}


def test_ess_of_independent_and_correlated(rng):
    iid = rng.normal(size=20_000)
    assert 0.85 * iid.size < effective_sample_size(iid) < 1.15 * iid.size
    ar = np.empty(20_000)
    ar[0] = 0.0
    for t in range(1, ar.size):
        ar[t] = 0.9 * ar[t - 1] + rng.normal()
    # AR(1) with rho = 0.9 has ESS n (1 - rho) / (1 + rho)
    assert effective_sample_size(ar) == pytest.approx(ar.size * 0.1 / 1.9, rel=0.25)


def test_predictive_binomial_reduction():
    p = np.full(300, 0.3)
    pmf = posterior_predictive_allocation(_samples({"p": p, "psi": np.full(300, 2.0)}, "binomial"), 8)
    np.testing.assert_allclose(pmf, stats.binom.pmf(np.arange(9), 8, 0.3), atol=1e-12)


def test_predictive_dispersion_changes_spread(rng):
    p = rng.uniform(0.28, 0.32, 500)
    k = np.arange(11)
    binom_var = 10 * 0.3 * 0.7
    for psi, sign in ((0.3, -1), (-0.05, 1)):
        pmf = posterior_predictive_allocation(_samples({"p": p, "psi": np.full(500, psi)}), 10)
        assert pmf.sum() == pytest.approx(1.0)
        var = pmf @ k**2 - (pmf @ k) ** 2
        assert np.sign(var - binom_var) == sign


def test_complete_data_logpost_matches_chain_state(small_secondary, priors):
    samples = run_chain(small_secondary, "double", priors, McmcConfig(iterations=500, burn_in=0, thin=1, seed=2))
    state = samples.final_state
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        value = complete_data_logposterior(small_secondary, (state.N, state.M), state.params, "double", priors)
    assert math.isfinite(value)


def test_primary_data_rejects_nothing_without_mortality_priors(small_primary):
    samples = run_chain(small_primary, "mult", PriorConfig(), McmcConfig(iterations=600, burn_in=100, thin=1))
    assert samples.n_draws == 500
    with pytest.raises(ValueError):
        run_chain(Dataset.from_pairs([(3, 1)]), "mult", PriorConfig(), McmcConfig(iterations=10, burn_in=0))
    assert Dataset.from_pairs([(3, 1)], mode=PRIMARY).is_primary
