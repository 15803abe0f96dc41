"""Convergence diagnostics and posterior summaries.

R-hat is the split potential scale reduction factor (each chain halved
before comparison).  ESS is the classic autocorrelation-sum estimator with
Geyer's initial-monotone truncation, computed on the same split chains; it
deliberately is not rank-normalized.  Zero-variance inputs yield NaN rather
than raising, so batch tooling can flag them.

Quantiles everywhere use linear interpolation between order statistics
(numpy's default rule); this matters because credible-interval endpoints
feed acceptance checks.
"""

from __future__ import annotations

from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

__all__ = ["rhat", "ess", "ess_sufficiency_threshold", "summarize_chains",
           "summary_table", "pacf", "DEFAULT_PROBS", "RHAT_BATCH_FLAG",
           "RHAT_STRICT_FLAG"]

DEFAULT_PROBS = (0.025, 0.5, 0.975)

#: per-test convergence flag threshold for batch runs
RHAT_BATCH_FLAG = 1.25
#: stricter advisory threshold for interactive single-test fits
RHAT_STRICT_FLAG = 1.01


def _split(chains: np.ndarray) -> np.ndarray:
    """Halve each chain; drops the last draw of odd-length chains."""
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    n = chains.shape[1] // 2
    return np.concatenate([chains[:, :n], chains[:, n:2 * n]], axis=0)


def rhat(chains: np.ndarray) -> float:
    """Split potential scale reduction factor.

    ``chains`` has shape (n_chains, n_iterations).  Returns NaN when the
    within-chain variance vanishes (constant chains) or there are fewer
    than two draws per half-chain.
    """
    sp = _split(chains)
    m, n = sp.shape
    if n < 2 or np.any(~np.isfinite(sp)):
        return float("nan")
    means = sp.mean(axis=1)
    w = float(np.mean(sp.var(axis=1, ddof=1)))
    b = n * float(np.var(means, ddof=1))
    if w == 0.0:
        return float("nan")
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased (1/n) autocovariance via FFT."""
    n = len(x)
    xc = x - x.mean()
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n].real
    return acov / n


def ess(chains: np.ndarray) -> float:
    """Effective sample size with Geyer initial-monotone truncation.

    Exceeds the nominal draw count for antithetic (negatively
    autocorrelated) chains; NaN for constant chains.
    """
    sp = _split(chains)
    m, n = sp.shape
    if n < 4 or np.any(~np.isfinite(sp)):
        return float("nan")
    acov = np.stack([_autocovariance(sp[i]) for i in range(m)])
    chain_var = acov[:, 0] * n / (n - 1.0)
    w = float(np.mean(chain_var))
    if w == 0.0:
        return float("nan")
    mean_var = w * (n - 1.0) / n
    var_plus = mean_var
    if m > 1:
        var_plus += float(np.var(sp.mean(axis=1), ddof=1))

    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # paired sums, truncated at the first non-positive pair, then forced
    # non-increasing
    max_pairs = (n - 1) // 2
    tau = 0.0
    prev = np.inf
    for k in range(max_pairs):
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0.0:
            break
        pair = min(pair, prev)
        tau += pair
        prev = pair
    tau = -1.0 + 2.0 * tau
    # floor the autocorrelation time for antithetic chains, capping the
    # estimate at N*log10(N)
    total = m * n
    tau = max(tau, 1.0 / math.log10(total)) if total > 10 else max(tau, 1.0)
    return float(total / tau)


def ess_sufficiency_threshold(n_chains: int) -> int:
    """Minimum ESS judged sufficient: 5m with m = 2 x number of chains."""
    return 5 * 2 * n_chains


def summarize_chains(chains: np.ndarray,
                     probs: Sequence[float] = DEFAULT_PROBS) -> dict:
    """Mean, SD, median, quantiles and diagnostics for one quantity.

    NaN draws (e.g. unresolvable derived quantities) are excluded from the
    moment/quantile statistics and counted; diagnostics are computed only
    when every draw is finite.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    flat = chains.reshape(-1)
    finite = flat[np.isfinite(flat)]
    n_nan = flat.size - finite.size
    if finite.size == 0:
        q = {p: float("nan") for p in probs}
        return dict(mean=float("nan"), sd=float("nan"), median=float("nan"),
                    quantiles=q, rhat=float("nan"), ess=float("nan"),
                    n_nan=n_nan)
    qs = np.quantile(finite, probs)
    return dict(
        mean=float(finite.mean()),
        sd=float(finite.std(ddof=1)) if finite.size > 1 else 0.0,
        median=float(np.quantile(finite, 0.5)),
        quantiles={float(p): float(v) for p, v in zip(probs, qs)},
        rhat=rhat(chains) if n_nan == 0 else float("nan"),
        ess=ess(chains) if n_nan == 0 else float("nan"),
        n_nan=n_nan,
    )


def summary_table(named_chains: Mapping[str, np.ndarray],
                  probs: Sequence[float] = DEFAULT_PROBS) -> list[dict]:
    """Summaries for a mapping name -> (n_chains, n_iter) draws."""
    rows = []
    for name, chains in named_chains.items():
        row = summarize_chains(chains, probs)
        row["name"] = name
        rows.append(row)
    return rows


def pacf(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Partial autocorrelations up to ``max_lag`` via Durbin-Levinson.

    Returns an array of NaNs when the series is constant (undefined PACF).
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    max_lag = min(max_lag, n - 1)
    out = np.full(max_lag, np.nan)
    if n < 2:
        return out
    acov = _autocovariance(x)
    if acov[0] <= 0.0:
        return out
    r = acov[:max_lag + 1] / acov[0]

    phi_prev = np.zeros(max_lag + 1)
    for k in range(1, max_lag + 1):
        if k == 1:
            phi_kk = r[1]
        else:
            num = r[k] - np.dot(phi_prev[1:k], r[k - 1:0:-1])
            den = 1.0 - np.dot(phi_prev[1:k], r[1:k])
            if den == 0.0:
                break
            phi_kk = num / den
        phi = phi_prev.copy()
        phi[k] = phi_kk
        phi[1:k] = phi_prev[1:k] - phi_kk * phi_prev[k - 1:0:-1]
        out[k - 1] = phi_kk
        phi_prev = phi
    return out
