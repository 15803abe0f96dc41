import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mbwfit.core import (
    BreathSeries,
    DivisionDomainError,
    MbwParams,
    MonotonicityError,
    NoCrossingError,
    ParameterDomainError,
    SeriesValidationError,
    cevgm_curve,
    cevtg_curve,
    end_test_breath_model,
    end_test_breath_standard,
    gas_curve,
    log_increments,
    outcomes_model,
    outcomes_standard,
)

from conftest import noiseless_series, random_params, reference_params

# Frozen oracle values (high-precision root finding / direct evaluation,
# independent of the implementation under test).
THETA_REF = 25.6064597834277       # end-test breath at reference medians, 1/40
GAS_AT_25_6 = 0.02502084254        # gas_curve(25.6) at reference medians
CEVTG_AT_5 = 61.6415844638         # 124.3 * (1 - exp(-0.137 * 5))


def oracle_bisect(p, threshold, lo=0.0, hi=200.0, iters=80):
    """Independent bisection on the direct (non-log) curve formula."""
    def f(k):
        return p.beta0 * math.exp(-p.beta1 * k) + (1 - p.beta0) * math.exp(-p.beta2 * k)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) > threshold:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

def test_params_ordering_enforced():
    with pytest.raises(ParameterDomainError):
        reference_params(beta1=0.6, beta2=0.5)
    with pytest.raises(ParameterDomainError):
        reference_params(beta0=1.0)
    with pytest.raises(ParameterDomainError):
        reference_params(sigma_r=0.0)


def test_params_near_equal_exponents_allowed():
    p = reference_params(beta1=0.2, beta2=0.2 + 1e-9)
    assert p.beta2 > p.beta1


def test_series_validation():
    k = [0, 1, 2, 3]
    with pytest.raises(SeriesValidationError):
        BreathSeries(k=[0, 1, 3, 4], gas=[1, .5, .3, .2],
                     cevgm=[0, 1, 2, 3], cevtg=[0, 1, 2, 3])
    with pytest.raises(SeriesValidationError):
        BreathSeries(k=k, gas=[1, .5, 0.0, .2],
                     cevgm=[0, 1, 2, 3], cevtg=[0, 1, 2, 3])
    with pytest.raises(SeriesValidationError):
        BreathSeries(k=[0, 1], gas=[1, .5], cevgm=[0, 1], cevtg=[0, 1])
    err = None
    try:
        BreathSeries(k=k, gas=[1, .5, .3, .2],
                     cevgm=[0, 10, 20, 30], cevtg=[0, 5, 5, 6])
    except MonotonicityError as e:
        err = e
    assert err is not None and err.index == 2
    with pytest.raises(SeriesValidationError):
        BreathSeries(k=k, gas=[1, .5, .3, .2],
                     cevgm=[1, 10, 20, 30], cevtg=[0, 5, 6, 7])


def test_series_immutable():
    s = noiseless_series(reference_params(), 10)
    with pytest.raises(ValueError):
        s.gas[0] = 2.0


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------

def test_gas_curve_normalized_at_zero(rng):
    for _ in range(1000):
        p = random_params(rng)
        assert gas_curve(0.0, p) == 1.0


def test_gas_curve_decays_to_zero():
    p = reference_params()
    assert gas_curve(1000.0, p) < 1e-10


def test_gas_curve_reference_value():
    assert gas_curve(25.6, reference_params()) == pytest.approx(GAS_AT_25_6, rel=1e-9)


def test_gas_curve_vectorized_matches_scalar():
    p = reference_params()
    ks = np.linspace(0, 60, 7)
    vec = gas_curve(ks, p)
    assert vec.shape == (7,)
    for i, k in enumerate(ks):
        assert vec[i] == gas_curve(float(k), p)


def test_curve_monotonicity_sampled(rng):
    ks = np.linspace(0.0, 80.0, 100)
    for _ in range(1000):
        p = random_params(rng)
        g = gas_curve(ks, p)
        assert np.all(np.diff(g) < 0)
        assert np.all(np.diff(cevgm_curve(ks, p)) > 0)
        # keep the cevtg grid below saturation: past exp(-beta4*k) ~ 1e-11
        # the analytic increments drop beneath float64 resolution
        ks_r = np.linspace(0.0, min(80.0, 25.0 / p.beta4), 100)
        assert np.all(np.diff(cevtg_curve(ks_r, p)) > 0)


def test_cevgm_curve_values():
    p = reference_params()
    assert cevgm_curve(0.0, p) == 0.0
    assert cevgm_curve(1.0, p) == pytest.approx(29.96)
    assert cevgm_curve(25.6, p) == pytest.approx(766.976, abs=1e-3)


def test_cevtg_curve_values():
    p = reference_params()
    assert cevtg_curve(0.0, p) == 0.0
    assert cevtg_curve(5.0, p) == pytest.approx(CEVTG_AT_5, rel=1e-10)
    # supremum is the asymptotic FRC
    assert cevtg_curve(1e6, p) == pytest.approx(124.3, rel=1e-12)


# ---------------------------------------------------------------------------
# log increments
# ---------------------------------------------------------------------------

def test_log_increments_constant_steps():
    out = log_increments([0.0, 30.0, 60.0])
    assert np.allclose(out, np.log(30.0))
    assert log_increments([0.0, 1.0]) == pytest.approx([0.0])


def test_log_increments_error_carries_index():
    with pytest.raises(MonotonicityError) as exc:
        log_increments([0.0, 2.0, 2.0, 3.0])
    assert exc.value.index == 1


@given(st.lists(st.floats(min_value=1e-3, max_value=1e3), min_size=1, max_size=40))
def test_log_increments_round_trip(increments):
    series = np.concatenate([[0.0], np.cumsum(increments)])
    out = log_increments(series)
    rebuilt = np.concatenate([[0.0], np.cumsum(np.exp(out))])
    assert np.allclose(rebuilt, series, rtol=1e-10, atol=0)


# ---------------------------------------------------------------------------
# end-test breath
# ---------------------------------------------------------------------------

def make_series(gas):
    m = len(gas)
    return BreathSeries(k=np.arange(m), gas=gas,
                        cevgm=np.arange(m, dtype=float) * 10,
                        cevtg=np.concatenate([[0.0], np.cumsum(np.full(m - 1, 5.0))]))


def test_end_test_standard_basic():
    assert end_test_breath_standard(make_series([1, .5, .02, .02, .02])) == 2
    assert end_test_breath_standard(make_series([1, .02, .5, .02, .02, .02])) == 3
    assert end_test_breath_standard(make_series([1, .5, .3])) is None


def test_end_test_model_reference():
    p = reference_params()
    theta = end_test_breath_model(p, 0.025)
    assert theta == pytest.approx(THETA_REF, abs=1e-8)
    assert abs(gas_curve(theta, p) - 0.025) < 1e-10


def test_end_test_model_single_exponential_closed_form():
    p = reference_params(beta0=1 - 1e-9, beta1=math.log(2), beta2=math.log(2) + 1e-9)
    theta = end_test_breath_model(p, 0.025)
    assert theta == pytest.approx(math.log2(40.0), abs=1e-6)


def test_end_test_model_grid_mode_close_to_bisection(rng):
    for _ in range(50):
        p = random_params(rng)
        try:
            exact = end_test_breath_model(p, 0.025)
        except NoCrossingError:
            continue
        grid = end_test_breath_model(p, 0.025, mode="grid", resolution=100)
        assert grid >= exact - 1e-9
        assert grid - exact <= 1.0 / 100 + 1e-9
        assert gas_curve(grid, p) <= 0.025


def test_end_test_model_no_crossing():
    p = reference_params(beta1=1e-4, beta2=2e-4)
    with pytest.raises(NoCrossingError):
        end_test_breath_model(p, 0.025)


def test_end_test_model_matches_independent_oracle(rng):
    checked = 0
    while checked < 1000:
        p = random_params(rng)
        try:
            theta = end_test_breath_model(p, 0.025)
        except NoCrossingError:
            continue
        assert abs(theta - oracle_bisect(p, 0.025)) < 1e-8
        checked += 1


def test_solver_consistency_residual(rng):
    for _ in range(200):
        p = random_params(rng)
        try:
            theta = end_test_breath_model(p, 0.025)
        except NoCrossingError:
            continue
        assert abs(gas_curve(theta, p) - 0.025) < 1e-8


# ---------------------------------------------------------------------------
# outcomes
# ---------------------------------------------------------------------------

def test_outcomes_standard_hand_example():
    # k40 = 2, so CEV = cevgm[2] and FRC = cevtg[2]/(1 - gas[2]); all three
    # quantities are read at the same end-test breath.
    s = BreathSeries(k=np.arange(5), gas=[1, .5, .02, .02, .02],
                     cevgm=[0, 100, 200, 300, 400], cevtg=[0, 50, 70, 80, 85])
    out = outcomes_standard(s, 0.025)
    assert out is not None
    assert out.theta == 2.0
    assert out.cev == pytest.approx(200.0)
    assert out.frc == pytest.approx(70.0 / 0.98)
    assert out.lci == pytest.approx(200.0 * 0.98 / 70.0)
    assert out.method_tag == "standard"


def test_outcomes_standard_incomplete_is_none():
    assert outcomes_standard(make_series([1, .5, .3, .2, .15])) is None


def test_outcomes_model_reference_values():
    pair = outcomes_model(reference_params(), 0.025)
    assert pair.asymptotic.lci == pytest.approx(6.171919027, rel=1e-6)
    assert pair.asymptotic.frc == pytest.approx(124.3)
    assert pair.by_theta.lci == pytest.approx(6.20344028, rel=1e-6)
    assert pair.by_theta.cev == pair.asymptotic.cev
    assert pair.by_theta.cev == pytest.approx(767.1695351, rel=1e-6)
    assert pair.by_theta.method_tag == "model_theta"
    assert pair.asymptotic.method_tag == "model_asymptotic_frc"


def test_outcomes_model_identities(rng):
    # FRC^(asymptotic) = beta3 and FRC^(by_theta) = h(theta)/(1-f(theta)),
    # and LCI*FRC = CEV to 1e-12 relative for both variants.
    for _ in range(200):
        p = random_params(rng)
        try:
            pair = outcomes_model(p, 0.025)
        except NoCrossingError:
            continue
        th = pair.by_theta.theta
        assert pair.asymptotic.frc == p.beta3
        expected_frc = cevtg_curve(th, p) / (1.0 - gas_curve(th, p))
        assert pair.by_theta.frc == pytest.approx(expected_frc, rel=1e-12)
        for o in pair:
            assert o.lci * o.frc == pytest.approx(o.cev, rel=1e-12)
        # substitution check: at f(theta) = threshold,
        # FRC^(by_theta) = h(theta)/(1 - threshold)
        assert pair.by_theta.frc == pytest.approx(
            cevtg_curve(th, p) / (1.0 - 0.025), rel=1e-6)
