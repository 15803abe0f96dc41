import numpy as np
import pytest

from mbwfit.core import BreathSeries, MbwParams

# Posterior medians of the reference infant cohort; used as a realistic
# anchor point throughout the suite.
REF_BETA = (0.68, 0.129, 0.53, 124.3, 0.137, 29.96)
REF_SIGMA = (0.10, 0.08, 0.08)


def reference_params(**overrides) -> MbwParams:
    kw = dict(beta0=REF_BETA[0], beta1=REF_BETA[1], beta2=REF_BETA[2],
              beta3=REF_BETA[3], beta4=REF_BETA[4], beta5=REF_BETA[5],
              sigma_c=REF_SIGMA[0], sigma_v=REF_SIGMA[1], sigma_r=REF_SIGMA[2])
    kw.update(overrides)
    return MbwParams(**kw)


def random_params(rng: np.random.Generator) -> MbwParams:
    """A random in-domain parameter set spanning a wide but sane range."""
    beta1 = float(np.exp(rng.uniform(np.log(0.02), np.log(0.8))))
    delta = float(np.exp(rng.uniform(np.log(1e-6), np.log(2.0))))
    return MbwParams(
        beta0=float(rng.uniform(0.02, 0.98)),
        beta1=beta1,
        beta2=beta1 + delta,
        beta3=float(np.exp(rng.uniform(np.log(20.0), np.log(500.0)))),
        beta4=float(np.exp(rng.uniform(np.log(0.03), np.log(0.8)))),
        beta5=float(np.exp(rng.uniform(np.log(5.0), np.log(80.0)))),
        sigma_c=float(np.exp(rng.uniform(np.log(0.02), np.log(0.4)))),
        sigma_v=float(np.exp(rng.uniform(np.log(0.02), np.log(0.4)))),
        sigma_r=float(np.exp(rng.uniform(np.log(0.02), np.log(0.4)))),
    )


def noiseless_series(p: MbwParams, m: int) -> BreathSeries:
    """The mean curves sampled at integer breaths, as a BreathSeries."""
    k = np.arange(m)
    gas = p.beta0 * np.exp(-p.beta1 * k) + (1 - p.beta0) * np.exp(-p.beta2 * k)
    cevgm = p.beta5 * k.astype(float)
    cevtg = p.beta3 * -np.expm1(-p.beta4 * k)
    return BreathSeries(k=k, gas=gas, cevgm=cevgm, cevtg=cevtg)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
