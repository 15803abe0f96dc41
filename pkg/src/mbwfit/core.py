"""Deterministic MBW quantities: per-breath series, curve models and outcomes.

A multiple-breath washout test yields three per-breath series once the raw
flow/molar-mass signals have been reduced by the acquisition software:

* GAS      -- tracer gas quantity at the end of each breath, as a proportion
              of the amount present at the start of the washout,
* CEVGM    -- cumulative expired volume of the gas mixture (mL),
* CEVTG    -- cumulative expired volume of tracer gas (mL).

This module holds the curve models for those series (a two-phase exponential
decay for GAS, a linear ramp for CEVGM, a saturating exponential for CEVTG),
the end-test breath definitions, and both the standard and the model-based
outcome computations (CEV, FRC, LCI).  Everything here is pure and
sampler-free; all values are immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np

__all__ = [
    "MbwError",
    "ParameterDomainError",
    "SeriesValidationError",
    "MonotonicityError",
    "NoCrossingError",
    "DivisionDomainError",
    "BreathSeries",
    "MbwParams",
    "MbwOutcomes",
    "ModelOutcomePair",
    "DEFAULT_THRESHOLD",
    "gas_curve",
    "log_gas_curve",
    "cevgm_curve",
    "cevtg_curve",
    "log_increments",
    "end_test_breath_standard",
    "end_test_breath_model",
    "outcomes_standard",
    "outcomes_model",
]

#: Standard end-test threshold: 1/40th of the starting tracer gas quantity.
DEFAULT_THRESHOLD = 0.025

#: Search ceiling (in breaths) for threshold crossings of the gas curve.
DEFAULT_K_MAX = 200.0


class MbwError(Exception):
    """Base class for all mbwfit errors."""


class ParameterDomainError(MbwError, ValueError):
    """A curve parameter violates its domain constraint."""


class SeriesValidationError(MbwError, ValueError):
    """A breath series violates a structural invariant.

    ``index`` locates the offending breath, ``test_id`` the offending test
    when known; both are kept as attributes so batch tooling can report them
    without parsing the message.
    """

    def __init__(self, message: str, *, index: Optional[int] = None,
                 test_id: Optional[str] = None):
        super().__init__(message)
        self.index = index
        self.test_id = test_id


class MonotonicityError(SeriesValidationError):
    """A cumulative series fails to increase strictly."""


class NoCrossingError(MbwError, ValueError):
    """The gas curve does not reach the threshold within the search ceiling."""


class DivisionDomainError(MbwError, ValueError):
    """A GAS value at the end-test breath makes the FRC denominator invalid."""


ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class BreathSeries:
    """Per-breath washout observations for a single test.

    ``k`` must be the contiguous indices 0..M-1 from the start of the
    washout, ``gas`` strictly positive, and both cumulative volume series
    must start at 0 and increase strictly.  M >= 3.
    """

    k: np.ndarray
    gas: np.ndarray
    cevgm: np.ndarray
    cevtg: np.ndarray

    def __init__(self, k, gas, cevgm, cevtg):
        object.__setattr__(self, "k", np.asarray(k, dtype=np.int64))
        object.__setattr__(self, "gas", np.asarray(gas, dtype=np.float64))
        object.__setattr__(self, "cevgm", np.asarray(cevgm, dtype=np.float64))
        object.__setattr__(self, "cevtg", np.asarray(cevtg, dtype=np.float64))
        self._validate()
        for arr in (self.k, self.gas, self.cevgm, self.cevtg):
            arr.setflags(write=False)

    def _validate(self) -> None:
        m = len(self.k)
        for name in ("gas", "cevgm", "cevtg"):
            if len(getattr(self, name)) != m:
                raise SeriesValidationError(
                    f"{name} has length {len(getattr(self, name))}, expected {m}")
        if m < 3:
            raise SeriesValidationError(f"series has {m} breaths, need at least 3")
        if not np.array_equal(self.k, np.arange(m)):
            bad = int(np.argmin(self.k == np.arange(m)))
            raise SeriesValidationError(
                f"breath indices must be contiguous 0..{m - 1}; "
                f"mismatch at position {bad}", index=bad)
        if np.any(self.gas <= 0) or not np.all(np.isfinite(self.gas)):
            bad = int(np.argmax(~((self.gas > 0) & np.isfinite(self.gas))))
            raise SeriesValidationError(
                f"gas must be finite and positive; offending breath {bad}",
                index=bad)
        for name in ("cevgm", "cevtg"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                bad = int(np.argmax(~np.isfinite(arr)))
                raise SeriesValidationError(
                    f"{name} must be finite; offending breath {bad}", index=bad)
            if arr[0] != 0.0:
                raise SeriesValidationError(
                    f"{name}[0] must be 0, got {arr[0]!r}", index=0)
            diffs = np.diff(arr)
            if np.any(diffs <= 0):
                bad = int(np.argmax(diffs <= 0)) + 1
                raise MonotonicityError(
                    f"{name} must increase strictly; violation at breath {bad}",
                    index=bad)

    def __len__(self) -> int:
        return len(self.k)

    @property
    def m(self) -> int:
        """Number of observed breaths (including breath 0)."""
        return len(self.k)


@dataclass(frozen=True)
class MbwParams:
    """Curve parameters and log-scale noise SDs for one MBW test.

    ``beta0`` in (0,1) weights the exp(-beta1*k) component of the gas curve;
    the decay constants are ordered 0 < beta1 < beta2.  ``beta3`` is the
    asymptotic FRC (mL), ``beta4`` the CEVTG decay constant, ``beta5`` the
    expired volume per breath (mL/breath).  The three sigmas are the
    log-scale noise SDs of GAS, the CEVGM increments, and the CEVTG
    increments respectively.
    """

    beta0: float
    beta1: float
    beta2: float
    beta3: float
    beta4: float
    beta5: float
    sigma_c: float
    sigma_v: float
    sigma_r: float

    def __post_init__(self):
        if not (0.0 < self.beta0 < 1.0):
            raise ParameterDomainError(f"beta0 must be in (0,1), got {self.beta0}")
        if not (0.0 < self.beta1 < self.beta2):
            raise ParameterDomainError(
                f"need 0 < beta1 < beta2, got beta1={self.beta1}, beta2={self.beta2}")
        for name in ("beta3", "beta4", "beta5", "sigma_c", "sigma_v", "sigma_r"):
            v = getattr(self, name)
            if not (v > 0.0 and math.isfinite(v)):
                raise ParameterDomainError(f"{name} must be positive, got {v}")

    def beta_vector(self) -> np.ndarray:
        """The six curve parameters as an array (beta0..beta5)."""
        return np.array([self.beta0, self.beta1, self.beta2,
                         self.beta3, self.beta4, self.beta5])

    def sigma_vector(self) -> np.ndarray:
        return np.array([self.sigma_c, self.sigma_v, self.sigma_r])

    @classmethod
    def from_vectors(cls, beta, sigma) -> "MbwParams":
        beta = np.asarray(beta, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        return cls(beta0=float(beta[0]), beta1=float(beta[1]), beta2=float(beta[2]),
                   beta3=float(beta[3]), beta4=float(beta[4]), beta5=float(beta[5]),
                   sigma_c=float(sigma[0]), sigma_v=float(sigma[1]),
                   sigma_r=float(sigma[2]))


@dataclass(frozen=True)
class MbwOutcomes:
    """An LCI/CEV/FRC triple with its end-test breath and method tag."""

    theta: float
    cev: float
    frc: float
    lci: float
    method_tag: str  # standard | model_theta | model_asymptotic_frc


class ModelOutcomePair(NamedTuple):
    """Both model-based outcome variants for one parameter set.

    ``by_theta`` uses the FRC evaluated at the end-test breath;
    ``asymptotic`` uses the asymptotic FRC (the preferred definition).
    """

    by_theta: MbwOutcomes
    asymptotic: MbwOutcomes


# ---------------------------------------------------------------------------
# Curve functions
# ---------------------------------------------------------------------------

def _log_gas_curve(k: ArrayLike, beta0: float, beta1: float, beta2: float) -> ArrayLike:
    # log of beta0*exp(-beta1*k) + (1-beta0)*exp(-beta2*k), stable for large k:
    # factor out the slower (smaller-exponent) component.
    k = np.asarray(k, dtype=float)
    rest = np.log1p((1.0 - beta0) / beta0 * np.exp(-(beta2 - beta1) * k))
    out = np.log(beta0) - beta1 * k + rest
    return out if out.ndim else float(out)


def gas_curve(k: ArrayLike, p: MbwParams) -> ArrayLike:
    """Tracer gas proportion at (real-valued) breath index k.

    Two-phase exponential decay; equals 1 exactly at k=0 and decreases
    strictly toward 0.
    """
    k = np.asarray(k, dtype=float)
    out = p.beta0 * np.exp(-p.beta1 * k) + (1.0 - p.beta0) * np.exp(-p.beta2 * k)
    return out if out.ndim else float(out)


def log_gas_curve(k: ArrayLike, p: MbwParams) -> ArrayLike:
    """log of :func:`gas_curve`, computed without underflow for large k."""
    return _log_gas_curve(k, p.beta0, p.beta1, p.beta2)


def cevgm_curve(k: ArrayLike, p: MbwParams) -> ArrayLike:
    """Cumulative expired gas-mixture volume (mL): a linear ramp beta5*k."""
    k = np.asarray(k, dtype=float)
    out = p.beta5 * k
    return out if out.ndim else float(out)


def cevtg_curve(k: ArrayLike, p: MbwParams) -> ArrayLike:
    """Cumulative expired tracer-gas volume (mL): beta3*(1 - exp(-beta4*k))."""
    k = np.asarray(k, dtype=float)
    out = p.beta3 * -np.expm1(-p.beta4 * k)
    return out if out.ndim else float(out)


def log_increments(series: ArrayLike) -> np.ndarray:
    """log of successive differences of a strictly increasing series.

    Raises :class:`MonotonicityError` naming the left index of the first
    non-increasing adjacent pair.
    """
    arr = np.asarray(series, dtype=float)
    diffs = np.diff(arr)
    if np.any(diffs <= 0):
        bad = int(np.argmax(diffs <= 0))
        raise MonotonicityError(
            f"series must increase strictly; non-increasing pair at index {bad}",
            index=bad)
    return np.log(diffs)


# ---------------------------------------------------------------------------
# End-test breath
# ---------------------------------------------------------------------------

def end_test_breath_standard(series: BreathSeries,
                             threshold: float = DEFAULT_THRESHOLD) -> Optional[int]:
    """First of three consecutive breaths with GAS at or below the threshold.

    Returns None when the test is incomplete (no such breath exists).
    """
    if not (0.0 < threshold < 1.0):
        raise ParameterDomainError(f"threshold must be in (0,1), got {threshold}")
    below = series.gas <= threshold
    for k in range(len(below) - 2):
        if below[k] and below[k + 1] and below[k + 2]:
            return k
    return None


def end_test_breath_model(p: MbwParams,
                          threshold: float = DEFAULT_THRESHOLD,
                          *,
                          mode: str = "bisection",
                          resolution: int = 100,
                          k_max: float = DEFAULT_K_MAX,
                          tol: float = 1e-10) -> float:
    """Real-valued breath index where the expected gas curve hits the threshold.

    ``mode="bisection"`` solves gas_curve(theta) = threshold on [0, k_max] to
    an absolute x-tolerance of ``tol``.  ``mode="grid"`` reproduces the
    reference line search instead: it walks integer brackets and returns the
    first multiple of 1/resolution whose curve value is at or below the
    threshold.
    """
    if not (0.0 < threshold < 1.0):
        raise ParameterDomainError(f"threshold must be in (0,1), got {threshold}")
    log_thr = math.log(threshold)
    b0, b1, b2 = p.beta0, p.beta1, p.beta2
    if _log_gas_curve(k_max, b0, b1, b2) > log_thr:
        raise NoCrossingError(
            f"gas curve stays above {threshold} up to k={k_max} "
            f"(beta0={b0}, beta1={b1}, beta2={b2})")

    if mode == "grid":
        if resolution < 1:
            raise ParameterDomainError(f"resolution must be >= 1, got {resolution}")
        step = 1.0 / resolution
        for m in range(1, int(math.ceil(k_max)) + 1):
            if _log_gas_curve(float(m), b0, b1, b2) > log_thr:
                continue
            # crossing lies in (m-1, m]; scan the grid inside the bracket
            for i in range((m - 1) * resolution + 1, m * resolution + 1):
                if _log_gas_curve(i * step, b0, b1, b2) <= log_thr:
                    return i * step
        raise NoCrossingError("grid search failed to bracket the crossing")
    if mode != "bisection":
        raise ValueError(f"unknown mode {mode!r}")

    lo, hi = 0.0, float(k_max)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _log_gas_curve(mid, b0, b1, b2) > log_thr:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Outcomes
# ---------------------------------------------------------------------------

def outcomes_standard(series: BreathSeries,
                      threshold: float = DEFAULT_THRESHOLD) -> Optional[MbwOutcomes]:
    """Standard empirical outcomes read off the observed series.

    CEV is the CEVGM at the end-test breath, FRC the CEVTG there divided by
    (1 - GAS).  Returns None for incomplete tests.
    """
    k40 = end_test_breath_standard(series, threshold)
    if k40 is None:
        return None
    c = float(series.gas[k40])
    if c >= 1.0:
        raise DivisionDomainError(
            f"gas at end-test breath {k40} is {c} >= 1; FRC undefined")
    cev = float(series.cevgm[k40])
    frc = float(series.cevtg[k40]) / (1.0 - c)
    return MbwOutcomes(theta=float(k40), cev=cev, frc=frc, lci=cev / frc,
                       method_tag="standard")


def outcomes_model(p: MbwParams,
                   threshold: float = DEFAULT_THRESHOLD,
                   **solver_kwargs) -> ModelOutcomePair:
    """Model-based outcomes, in both variants, at a parameter set.

    The ``by_theta`` variant evaluates FRC at the end-test breath,
    FRC = h(theta)/(1 - f(theta)); the ``asymptotic`` variant uses the
    asymptotic FRC = beta3 directly.  Solver errors propagate.
    """
    theta = end_test_breath_model(p, threshold, **solver_kwargs)
    cev = cevgm_curve(theta, p)
    f_theta = gas_curve(theta, p)
    frc_theta = cevtg_curve(theta, p) / (1.0 - f_theta)
    by_theta = MbwOutcomes(theta=theta, cev=cev, frc=frc_theta,
                           lci=cev / frc_theta, method_tag="model_theta")
    asymptotic = MbwOutcomes(theta=theta, cev=cev, frc=p.beta3,
                             lci=cev / p.beta3, method_tag="model_asymptotic_frc")
    return ModelOutcomePair(by_theta=by_theta, asymptotic=asymptotic)
