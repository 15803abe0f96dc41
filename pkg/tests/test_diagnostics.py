import numpy as np
import pytest

from mbwfit.inference.diagnostics import (
    ess,
    ess_sufficiency_threshold,
    pacf,
    rhat,
    summarize_chains,
)


def test_rhat_iid_chains_near_one(rng):
    chains = rng.standard_normal((4, 10000))
    assert abs(rhat(chains) - 1.0) < 0.01


def test_rhat_separated_chains_large():
    rng = np.random.default_rng(0)
    chains = rng.standard_normal((4, 500)) + np.arange(4)[:, None] * 5.0
    assert rhat(chains) > 2.0


def test_rhat_detects_trend_within_chain():
    # split halves expose a drifting chain even when chains agree
    trend = np.linspace(0, 5, 1000)
    chains = np.stack([trend, trend])
    assert rhat(chains) > 1.2


def test_rhat_constant_chains_nan():
    assert np.isnan(rhat(np.ones((2, 100))))


def test_ess_iid_large():
    rng = np.random.default_rng(1)
    chains = rng.standard_normal((4, 1000))
    assert ess(chains) > 3000


def test_ess_autocorrelated_small():
    rng = np.random.default_rng(2)
    n = 2000
    chains = np.empty((4, n))
    for c in range(4):
        x = np.empty(n)
        x[0] = rng.standard_normal()
        for i in range(1, n):
            x[i] = 0.95 * x[i - 1] + rng.standard_normal() * np.sqrt(1 - 0.95 ** 2)
        chains[c] = x
    n_eff = ess(chains)
    assert n_eff < 0.2 * chains.size


def test_ess_antithetic_exceeds_nominal():
    base = np.tile([1.0, -1.0], 500)
    chains = np.stack([base, -base])
    jitter = np.random.default_rng(3).standard_normal(chains.shape) * 1e-3
    n_eff = ess(chains + jitter)
    assert n_eff > chains.size


def test_ess_constant_nan():
    assert np.isnan(ess(np.zeros((4, 100))))


def test_ess_sufficiency_threshold():
    assert ess_sufficiency_threshold(4) == 40
    assert ess_sufficiency_threshold(2) == 20


def test_summarize_constant_chain():
    row = summarize_chains(np.full((1, 50), 3.25))
    assert row["median"] == 3.25
    assert row["sd"] == 0.0
    assert np.isnan(row["rhat"])


def test_summarize_ramp_quantile():
    ramp = np.arange(1, 4001, dtype=float).reshape(4, 1000)
    row = summarize_chains(ramp)
    assert row["quantiles"][0.025] == pytest.approx(100.975)
    assert row["quantiles"][0.975] == pytest.approx(3900.025)
    assert row["median"] == pytest.approx(2000.5)


def test_summarize_handles_nan_draws():
    draws = np.arange(1.0, 101.0).reshape(1, 100)
    draws[0, :10] = np.nan
    row = summarize_chains(draws)
    assert row["n_nan"] == 10
    assert row["median"] == pytest.approx(55.5)
    assert np.isnan(row["rhat"])


def test_pacf_white_noise_standard_error():
    rng = np.random.default_rng(4)
    n = 200
    hits = sum(abs(pacf(rng.standard_normal(n), 1)[0]) < 2 / np.sqrt(n)
               for _ in range(1000))
    assert hits >= 930


def test_pacf_ar1_recovers_phi():
    rng = np.random.default_rng(5)
    n = 4000
    x = np.empty(n)
    x[0] = rng.standard_normal()
    for i in range(1, n):
        x[i] = 0.8 * x[i - 1] + rng.standard_normal()
    p = pacf(x, 3)
    assert p[0] == pytest.approx(0.8, abs=0.1)
    assert abs(p[1]) < 0.1 and abs(p[2]) < 0.1


def test_pacf_constant_nan():
    assert np.all(np.isnan(pacf(np.full(100, 2.0), 5)))
