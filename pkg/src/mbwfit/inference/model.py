"""Single-test washout posterior: priors, transforms, log density and gradient.

The sampler works on an unconstrained 9-vector q:

    q = (logit beta0, log beta1, log(beta2 - beta1), log beta3, log beta4,
         log beta5, log sigma_c, log sigma_v, log sigma_r)

which maps onto the constrained parameter domain exactly (the ordering
beta1 < beta2 and all positivity constraints hold by construction), so the
log posterior is finite everywhere except under floating-point
overflow/underflow, where it returns -inf rather than raising.

The likelihood follows the observation model: GAS values are log-normal
around the two-phase decay curve, and the log increments of CEVGM and CEVTG
are normal around log(beta5) and log(beta3) + log(1-exp(-beta4)) - beta4*k
(left breath index) respectively.  The gradient is analytic; a
finite-difference oracle in the test suite checks it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from ..core import (
    BreathSeries,
    MbwParams,
    ParameterDomainError,
    log_increments,
)

__all__ = [
    "PARAM_NAMES",
    "PriorSpec",
    "MbwPosterior",
    "constrain_params",
    "unconstrain_params",
    "log_likelihood",
    "log_posterior",
    "log_posterior_gradient",
]

PARAM_NAMES = ("beta0", "beta1", "beta2", "beta3", "beta4", "beta5",
               "sigma_c", "sigma_v", "sigma_r")

_LOG_2PI = math.log(2.0 * math.pi)
_HC_SCALE = 2.5  # scale of the half-Cauchy prior on every noise SD
_LOG_HC = math.log(2.0 / (math.pi * _HC_SCALE))


@dataclass(frozen=True)
class PriorSpec:
    """Diffuse or informative prior over the six curve parameters.

    The diffuse prior uses fixed per-parameter families: Beta(2,2) on beta0,
    standard normals on beta1/beta2/beta4 (restricted to the ordered
    positive cone), Normal(0, sd 1000) on beta3 and Normal(0, sd 100) on
    beta5.  The informative prior is a multivariate normal over
    (beta0..beta5), restricted to the same domain.  Both put
    Half-Cauchy(0, 2.5) on the noise SDs.
    """

    kind: str  # "diffuse" | "informative"
    mu: Optional[np.ndarray] = None
    sigma_mat: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("diffuse", "informative"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "informative":
            mu = np.asarray(self.mu, dtype=float)
            sig = np.asarray(self.sigma_mat, dtype=float)
            if mu.shape != (6,):
                raise ValueError(f"mu must have shape (6,), got {mu.shape}")
            if sig.shape != (6, 6):
                raise ValueError(f"sigma_mat must be 6x6, got {sig.shape}")
            if not np.allclose(sig, sig.T, rtol=0, atol=1e-8):
                raise ValueError("sigma_mat must be symmetric")
            try:
                np.linalg.cholesky(sig)
            except np.linalg.LinAlgError:
                raise ValueError("sigma_mat must be positive definite") from None
            object.__setattr__(self, "mu", mu)
            object.__setattr__(self, "sigma_mat", 0.5 * (sig + sig.T))
            self.mu.setflags(write=False)
            self.sigma_mat.setflags(write=False)
        elif self.mu is not None or self.sigma_mat is not None:
            raise ValueError("diffuse prior takes no mu/sigma_mat")

    @classmethod
    def diffuse(cls) -> "PriorSpec":
        return cls(kind="diffuse")

    @classmethod
    def informative(cls, mu, sigma_mat) -> "PriorSpec":
        return cls(kind="informative", mu=mu, sigma_mat=sigma_mat)


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def unconstrain_params(values: np.ndarray) -> np.ndarray:
    """Map a constrained 9-vector (beta0..beta5, sigmas) to sampler space."""
    v = np.asarray(values, dtype=float)
    if not (0 < v[0] < 1 and 0 < v[1] < v[2] and np.all(v[3:] > 0)):
        raise ParameterDomainError(f"values outside the parameter domain: {v}")
    q = np.empty(9)
    q[0] = math.log(v[0] / (1.0 - v[0]))
    q[1] = math.log(v[1])
    q[2] = math.log(v[2] - v[1])
    q[3:] = np.log(v[3:])
    return q


def constrain_params(q: np.ndarray) -> np.ndarray:
    """Inverse of :func:`unconstrain_params`."""
    q = np.asarray(q, dtype=float)
    v = np.empty(9)
    v[0] = 1.0 / (1.0 + math.exp(-q[0]))
    v[1] = math.exp(q[1])
    v[2] = v[1] + math.exp(q[2])
    v[3:] = np.exp(q[3:])
    return v


# ---------------------------------------------------------------------------
# log density kernel
# ---------------------------------------------------------------------------

@njit(cache=True)
def _logp_grad(q, logc, kk, dv, dr, kl, prior_kind, mu, prec, prior_const, grad):
    for i in range(9):
        grad[i] = 0.0

    b0 = 1.0 / (1.0 + math.exp(-q[0]))
    b1 = math.exp(q[1])
    delta = math.exp(q[2])
    b2 = b1 + delta
    b3 = math.exp(q[3])
    b4 = math.exp(q[4])
    b5 = math.exp(q[5])
    sc = math.exp(q[6])
    sv = math.exp(q[7])
    sr = math.exp(q[8])

    if not (0.0 < b0 < 1.0) or b1 <= 0.0 or delta <= 0.0 or not np.isfinite(b2) \
            or b3 <= 0.0 or b4 <= 0.0 or b5 <= 0.0 \
            or sc <= 0.0 or sv <= 0.0 or sr <= 0.0 \
            or not (np.isfinite(b3) and np.isfinite(b4) and np.isfinite(b5)
                    and np.isfinite(sc) and np.isfinite(sv) and np.isfinite(sr)):
        return -np.inf

    # change of variables
    lp = math.log(b0) + math.log(1.0 - b0) \
        + q[1] + q[2] + q[3] + q[4] + q[5] + q[6] + q[7] + q[8]
    g0 = 1.0 - 2.0 * b0
    g1 = 1.0
    g2 = 1.0
    g3 = 1.0
    g4 = 1.0
    g5 = 1.0
    g6 = 1.0
    g7 = 1.0
    g8 = 1.0

    # GAS: log-normal around the two-phase decay curve
    inv_sc2 = 1.0 / (sc * sc)
    db0 = 0.0
    db1 = 0.0
    db2 = 0.0
    dsc = 0.0
    for i in range(logc.shape[0]):
        k = kk[i]
        u = math.exp(-delta * k)
        denom = b0 + (1.0 - b0) * u
        logf = math.log(denom) - b1 * k
        r = logc[i] - logf
        lp += -logc[i] - q[6] - 0.5 * _LOG_2PI - 0.5 * r * r * inv_sc2
        w = r * inv_sc2
        db0 += w * (1.0 - u) / denom
        db1 += w * (-k * b0 / denom)
        db2 += w * (-k * (1.0 - b0) * u / denom)
        dsc += r * r * inv_sc2 / sc
    dsc -= logc.shape[0] / sc

    # CEVGM increments: normal around log(beta5)
    inv_sv2 = 1.0 / (sv * sv)
    log_b5 = math.log(b5)
    db5 = 0.0
    dsv = 0.0
    for i in range(dv.shape[0]):
        e = dv[i] - log_b5
        lp += -q[7] - 0.5 * _LOG_2PI - 0.5 * e * e * inv_sv2
        db5 += e * inv_sv2 / b5
        dsv += e * e * inv_sv2 / sv
    dsv -= dv.shape[0] / sv

    # CEVTG increments: normal around log(beta3) + log(1-exp(-beta4)) - beta4*k
    inv_sr2 = 1.0 / (sr * sr)
    a0 = math.log(b3) + math.log(-math.expm1(-b4))
    inv_em1 = 1.0 / math.expm1(b4)
    db3 = 0.0
    db4 = 0.0
    dsr = 0.0
    for i in range(dr.shape[0]):
        e = dr[i] - (a0 - b4 * kl[i])
        lp += -q[8] - 0.5 * _LOG_2PI - 0.5 * e * e * inv_sr2
        db3 += e * inv_sr2 / b3
        db4 += e * inv_sr2 * (inv_em1 - kl[i])
        dsr += e * e * inv_sr2 / sr
    dsr -= dr.shape[0] / sr

    # prior on the curve parameters
    if prior_kind == 0:
        lp += math.log(b0) + math.log(1.0 - b0) + math.log(6.0)
        db0 += 1.0 / b0 - 1.0 / (1.0 - b0)
        lp += -0.5 * _LOG_2PI - 0.5 * b1 * b1
        db1 += -b1
        lp += -0.5 * _LOG_2PI - 0.5 * b2 * b2
        db2 += -b2
        lp += -0.5 * _LOG_2PI - math.log(1000.0) - 0.5 * b3 * b3 / 1.0e6
        db3 += -b3 / 1.0e6
        lp += -0.5 * _LOG_2PI - 0.5 * b4 * b4
        db4 += -b4
        lp += -0.5 * _LOG_2PI - math.log(100.0) - 0.5 * b5 * b5 / 1.0e4
        db5 += -b5 / 1.0e4
    else:
        z0 = b0 - mu[0]
        z1 = b1 - mu[1]
        z2 = b2 - mu[2]
        z3 = b3 - mu[3]
        z4 = b4 - mu[4]
        z5 = b5 - mu[5]
        p0 = prec[0, 0] * z0 + prec[0, 1] * z1 + prec[0, 2] * z2 \
            + prec[0, 3] * z3 + prec[0, 4] * z4 + prec[0, 5] * z5
        p1 = prec[1, 0] * z0 + prec[1, 1] * z1 + prec[1, 2] * z2 \
            + prec[1, 3] * z3 + prec[1, 4] * z4 + prec[1, 5] * z5
        p2 = prec[2, 0] * z0 + prec[2, 1] * z1 + prec[2, 2] * z2 \
            + prec[2, 3] * z3 + prec[2, 4] * z4 + prec[2, 5] * z5
        p3 = prec[3, 0] * z0 + prec[3, 1] * z1 + prec[3, 2] * z2 \
            + prec[3, 3] * z3 + prec[3, 4] * z4 + prec[3, 5] * z5
        p4 = prec[4, 0] * z0 + prec[4, 1] * z1 + prec[4, 2] * z2 \
            + prec[4, 3] * z3 + prec[4, 4] * z4 + prec[4, 5] * z5
        p5 = prec[5, 0] * z0 + prec[5, 1] * z1 + prec[5, 2] * z2 \
            + prec[5, 3] * z3 + prec[5, 4] * z4 + prec[5, 5] * z5
        lp += prior_const - 0.5 * (z0 * p0 + z1 * p1 + z2 * p2
                                   + z3 * p3 + z4 * p4 + z5 * p5)
        db0 -= p0
        db1 -= p1
        db2 -= p2
        db3 -= p3
        db4 -= p4
        db5 -= p5

    # half-Cauchy priors on the noise SDs
    hc2 = _HC_SCALE * _HC_SCALE
    lp += _LOG_HC - math.log(1.0 + sc * sc / hc2)
    dsc += -2.0 * sc / (hc2 + sc * sc)
    lp += _LOG_HC - math.log(1.0 + sv * sv / hc2)
    dsv += -2.0 * sv / (hc2 + sv * sv)
    lp += _LOG_HC - math.log(1.0 + sr * sr / hc2)
    dsr += -2.0 * sr / (hc2 + sr * sr)

    if not np.isfinite(lp):
        return -np.inf

    # chain rule back to the unconstrained scale (incl. Jacobian gradient)
    grad[0] = db0 * b0 * (1.0 - b0) + g0
    grad[1] = (db1 + db2) * b1 + g1
    grad[2] = db2 * delta + g2
    grad[3] = db3 * b3 + g3
    grad[4] = db4 * b4 + g4
    grad[5] = db5 * b5 + g5
    grad[6] = dsc * sc + g6
    grad[7] = dsv * sv + g7
    grad[8] = dsr * sr + g8
    return lp


_EMPTY = np.zeros(0)
_EMPTY_MU = np.zeros(6)
_EMPTY_PREC = np.zeros((6, 6))


class MbwPosterior:
    """Log posterior of a single test under a given prior.

    ``series=None`` gives the prior-only density (used by prior-recovery
    checks).  Instances are immutable and safe to share across threads.
    """

    dim = 9
    param_names = PARAM_NAMES

    def __init__(self, series: Optional[BreathSeries], prior: PriorSpec):
        self.prior = prior
        self.series = series
        if series is None:
            self._logc = _EMPTY
            self._kk = _EMPTY
            self._dv = _EMPTY
            self._dr = _EMPTY
            self._kl = _EMPTY
        else:
            self._logc = np.log(series.gas)
            self._kk = series.k.astype(np.float64)
            self._dv = log_increments(series.cevgm)
            self._dr = log_increments(series.cevtg)
            self._kl = self._kk[:-1]
        if prior.kind == "informative":
            self._prior_kind = 1
            self._mu = prior.mu
            self._prec = np.linalg.inv(prior.sigma_mat)
            sign, logdet = np.linalg.slogdet(prior.sigma_mat)
            self._prior_const = -0.5 * (6.0 * _LOG_2PI + logdet)
        else:
            self._prior_kind = 0
            self._mu = _EMPTY_MU
            self._prec = _EMPTY_PREC
            self._prior_const = 0.0

    def logp_and_grad(self, q: np.ndarray) -> tuple[float, np.ndarray]:
        grad = np.empty(9)
        lp = _logp_grad(np.asarray(q, dtype=float), self._logc, self._kk,
                        self._dv, self._dr, self._kl, self._prior_kind,
                        self._mu, self._prec, self._prior_const, grad)
        if lp == -np.inf:
            grad[:] = 0.0
        return lp, grad

    def logp(self, q: np.ndarray) -> float:
        return self.logp_and_grad(q)[0]

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        """One draw from the prior, mapped to the unconstrained scale.

        Noise SDs are redrawn until <= 10: untruncated half-Cauchy tails
        produce numerically useless starting states.
        """
        if self.prior.kind == "informative":
            for _ in range(1000):
                zeta = rng.multivariate_normal(self.prior.mu, self.prior.sigma_mat)
                if 0 < zeta[0] < 1 and 0 < zeta[1] < zeta[2] and np.all(zeta[3:] > 0):
                    break
            else:
                raise ParameterDomainError(
                    "informative prior mass is almost entirely outside the "
                    "parameter domain")
        else:
            zeta = np.empty(6)
            zeta[0] = rng.beta(2.0, 2.0)
            pair = np.sort(np.abs(rng.standard_normal(2)))
            while pair[0] == pair[1]:
                pair = np.sort(np.abs(rng.standard_normal(2)))
            zeta[1], zeta[2] = pair
            zeta[3] = abs(rng.standard_normal()) * 1000.0
            zeta[4] = abs(rng.standard_normal())
            zeta[5] = abs(rng.standard_normal()) * 100.0
            while zeta[3] == 0 or zeta[4] == 0 or zeta[5] == 0:
                zeta[3] = abs(rng.standard_normal()) * 1000.0
                zeta[4] = abs(rng.standard_normal())
                zeta[5] = abs(rng.standard_normal())
        sigmas = np.empty(3)
        for j in range(3):
            s = abs(rng.standard_cauchy()) * _HC_SCALE
            while not (0.0 < s <= 10.0):
                s = abs(rng.standard_cauchy()) * _HC_SCALE
            sigmas[j] = s
        return unconstrain_params(np.concatenate([zeta, sigmas]))

    def constrain(self, q: np.ndarray) -> np.ndarray:
        return constrain_params(q)


# ---------------------------------------------------------------------------
# public functional surface
# ---------------------------------------------------------------------------

def _params_to_q(p: MbwParams) -> np.ndarray:
    return unconstrain_params(np.concatenate([p.beta_vector(), p.sigma_vector()]))


def log_likelihood(series: BreathSeries, p: MbwParams) -> float:
    """Observation log density only (no prior, no transform Jacobian)."""
    post = MbwPosterior(series, PriorSpec.diffuse())
    prior_only = MbwPosterior(None, PriorSpec.diffuse())
    q = _params_to_q(p)
    return post.logp(q) - prior_only.logp(q)


def log_posterior(series: BreathSeries, p: MbwParams, prior: PriorSpec) -> float:
    """Log posterior density at constrained parameters (natural scale).

    This is the density over the constrained parameters themselves, i.e.
    without the unconstrained-transform Jacobian; it is what Eq-style
    likelihood-plus-prior arithmetic gives.
    """
    q = _params_to_q(p)
    lp = MbwPosterior(series, prior).logp(q)
    if lp == -np.inf:
        return lp
    # remove the transform Jacobian contribution
    jac = math.log(p.beta0) + math.log(1 - p.beta0) + q[1] + q[2] + float(np.sum(q[3:]))
    return lp - jac


def log_posterior_gradient(series: BreathSeries, p: MbwParams,
                           prior: PriorSpec) -> np.ndarray:
    """Gradient of the sampler-scale log posterior at p.

    Taken with respect to the unconstrained parameterization (logit/log
    transforms), including the log-Jacobian term, i.e. exactly the gradient
    the gradient-based sampler consumes.
    """
    return MbwPosterior(series, prior).logp_and_grad(_params_to_q(p))[1]
