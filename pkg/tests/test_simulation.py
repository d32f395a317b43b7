import csv
import json
import math

import numpy as np
import pytest
from scipy import stats

from sexalloc.distributions import DispersionParams, expected_sex_ratio
from sexalloc.mcmc import McmcConfig
from sexalloc.simulation import (
    BF_LABELS,
    MEELIS_LABELS,
    GeneratorSpec,
    ReplicateResult,
    StudySummary,
    analyse_replicate,
    bayes_vs_meelis_study,
    classical_power_surface,
    classical_replicates,
    replicate_rng,
    simulate_dataset,
    study_priors,
    type1_error_study,
)


@pytest.mark.parametrize(
    "kwargs",
    [dict(C=0, lam=5.0), dict(C=5, lam=0.0), dict(C=5, lam=5.0, d=1.0), dict(C=5, lam=5.0, p=1.5),
     dict(C=5, lam=5.0, model="beta")],
)
def test_generator_validation(kwargs):
    with pytest.raises(ValueError):
        GeneratorSpec(**kwargs)


def test_zero_mortality_observes_primary():
    sim = simulate_dataset(GeneratorSpec(C=300, lam=8.0, model="mult", p=0.2, psi=0.3, d=0.0, seed=1))
    np.testing.assert_array_equal(sim.primary.sizes, sim.secondary.sizes)
    np.testing.assert_array_equal(sim.primary.males, sim.secondary.males)
    assert np.all(sim.deaths == 0)


@pytest.mark.parametrize("model,psi", [("binomial", 0.0), ("mult", 0.25), ("double", -0.4)])
def test_moments(model, psi):
    C, lam, p, d = 10_000, 10.0, 0.3, 0.2
    sim = simulate_dataset(GeneratorSpec(C=C, lam=lam, model=model, p=p, psi=psi, d=d, seed=7))
    n, m = sim.secondary.sizes, sim.secondary.males
    # survivors are Poisson(lam (1 - d))
    assert abs(n.mean() - lam * (1 - d)) < 4 * math.sqrt(lam * (1 - d) / C)
    assert abs(n.var() - lam * (1 - d)) < 0.3
    assert abs(sim.deaths.mean() - lam * d) < 4 * math.sqrt(lam * d / C)
    N = np.arange(0, 60)
    w = stats.poisson.pmf(N, lam)
    mean_M = sum(wi * Ni * expected_sex_ratio(model, Ni, DispersionParams(p, psi)) for wi, Ni in zip(w, N) if Ni)
    assert abs(m.mean() - (1 - d) * mean_M) < 4 * math.sqrt(m.var() / C)


def test_hidden_and_observed_are_consistent():
    sim = simulate_dataset(GeneratorSpec(C=2000, lam=6.0, model="double", p=0.4, psi=0.5, d=0.45, seed=3))
    N, M = sim.primary.sizes, sim.primary.males
    n, m = sim.secondary.sizes, sim.secondary.males
    assert np.all(n <= N) and np.all(m <= M) and np.all(n - m <= N - M)
    np.testing.assert_array_equal(sim.secondary.deaths, N - n)
    assert sim.primary.is_primary and not sim.secondary.is_primary


def test_replicate_streams_are_reproducible():
    spec = GeneratorSpec(C=40, lam=10.0, model="mult", p=0.1, psi=0.3, d=0.3, seed=5)
    a = simulate_dataset(spec, replicate_rng(5, 2, 9)).secondary
    b = simulate_dataset(spec, replicate_rng(5, 2, 9)).secondary
    c = simulate_dataset(spec, replicate_rng(5, 2, 10)).secondary
    np.testing.assert_array_equal(a.males, b.males)
    np.testing.assert_array_equal(a.sizes, b.sizes)
    assert not (np.array_equal(a.sizes, c.sizes) and np.array_equal(a.males, c.males))
    assert simulate_dataset(spec).secondary.digest() == simulate_dataset(spec).secondary.digest()


def test_classical_tests_calibrated_under_null():
    spec = GeneratorSpec(C=50, lam=10.0, model="binomial", p=0.3, d=0.2, seed=2)
    res = classical_replicates(spec, 3000, seed=2)
    for key in ("meelis_p", "james_p"):
        rate = np.mean(np.nan_to_num(res[key], nan=1.0) < 0.05)
        assert abs(rate - 0.05) < 0.015, key
    assert abs(np.nanmean(res["R"]) - 1) < 0.03


def test_power_surface_structure_and_mortality_trend(tmp_path):
    surface = classical_power_surface([25, 100], [0.0, 0.5], reps=400, seed=4)
    assert surface.power.shape == (2, 2)
    # mortality pushes R towards the binomial value and erodes power
    assert np.all(surface.mean_R[:, 0] < surface.mean_R[:, 1])
    assert np.all(surface.mean_R < 1)
    assert surface.power[1, 0] > surface.power[1, 1]
    assert surface.power[1, 0] > surface.power[0, 0]
    cell = surface.cell(100, 0.5)
    assert cell["se"] == pytest.approx(math.sqrt(cell["power"] * (1 - cell["power"]) / 400))
    surface.to_csv(tmp_path / "s.csv")
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert len(rows) == 4 and set(rows[0]) >= {"C", "d", "power", "se", "mean_R"}
    json.dumps(surface.to_dict())


def test_power_surface_errors():
    with pytest.raises(ValueError):
        classical_power_surface([10], [0.0], reps=50)
    with pytest.raises(ValueError):
        classical_power_surface([10], [0.0], reps=200, test="chisq")


def _result(i, p, log_bf, prob0=0.5, interval=(-0.1, 0.4)):
    return ReplicateResult(i, None if p is None else 0.0, p, log_bf, prob0, interval)


def test_study_tables_and_dominance():
    spec = GeneratorSpec(C=10, lam=10.0, model="mult", p=0.1, psi=0.3, d=0.3)
    results = [
        _result(0, 0.5, 0.2),
        _result(1, None, 0.1),  # undefined Meelis statistic counts as no evidence
        _result(2, 0.07, math.log(5.0)),
        _result(3, 0.02, math.log(50.0), prob0=0.01, interval=(0.1, 0.9)),
        _result(4, 0.0004, math.log(500.0), prob0=0.001, interval=(0.2, 1.0)),
        _result(5, 0.03, 0.5),
        ReplicateResult(6, 0.0, 0.9, None, None, error="EvidenceError: boom"),
    ]
    summary = StudySummary("t", spec, results)
    meelis = summary.meelis_table()
    assert list(meelis) == list(MEELIS_LABELS)
    assert sum(meelis.values()) == pytest.approx(100.0)
    assert meelis[">0.1"] == pytest.approx(300 / 7)
    bf = summary.bf_table()
    assert list(bf) == list(BF_LABELS) and sum(bf.values()) == pytest.approx(100.0)
    assert bf["0-3"] == pytest.approx(50.0) and bf[">100"] == pytest.approx(100 / 6)
    assert len(summary.failures) == 1
    # Bayes failures: replicates 0, 1, 5; Meelis also fails on 0 and 1
    assert summary.dominance() == pytest.approx(2 / 3)
    assert summary.bayes_rejection_rate() == pytest.approx(2 / 6)
    assert summary.meelis_rejection_rate() == pytest.approx(3 / 7)
    assert summary.psi_excludes_zero() == 2
    json.dumps(summary.to_dict())


def test_analyse_replicate_and_small_study(tmp_path):
    config = McmcConfig(iterations=800, burn_in=200, thin=1, latent_step=2)
    spec = GeneratorSpec(C=12, lam=10.0, model="mult", p=0.1, psi=0.3, d=0.3, seed=6)
    data = simulate_dataset(spec).secondary
    res = analyse_replicate(0, data, study_priors(), config)
    assert res.error is None and 0 <= res.prob_null <= 1
    assert res.prob_null == pytest.approx(1 / (1 + math.exp(res.log_bf)))
    summary = bayes_vs_meelis_study(20, spec, config)
    assert len(summary.results) == 20
    assert sum(summary.bf_table().values()) == pytest.approx(100.0)
    again = bayes_vs_meelis_study(20, spec, config)
    assert [r.log_bf for r in again.results] == [r.log_bf for r in summary.results]
    summary.scatter_csv(tmp_path / "x.csv")
    assert len(open(tmp_path / "x.csv").read().splitlines()) == 21


def test_study_argument_errors():
    with pytest.raises(ValueError):
        bayes_vs_meelis_study(5)
    with pytest.raises(ValueError, match="binomial generator"):
        type1_error_study(10, GeneratorSpec(C=10, lam=10.0, model="mult", p=0.1, psi=0.3))
