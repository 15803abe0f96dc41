"""Gradient-based MCMC engine.

The default algorithm is a dynamic-trajectory Hamiltonian sampler (no-U-turn
tree doubling with slice acceptance) with dual-averaging step-size adaptation
and diagonal mass-matrix estimation over a windowed warmup schedule.  An
adaptive random-walk Metropolis mode is available as a gradient-free
fallback; it targets the same posterior and is checked against the same
conjugate oracle in the tests.

Targets are duck-typed: anything with ``dim``, ``logp_and_grad(q)`` and
``initial_point(rng)`` can be sampled.  Each chain draws from its own
counter-based RNG stream keyed by (seed, chain index), so results do not
depend on how chains are scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

__all__ = ["SamplerConfig", "ChainResult", "InitializationError",
           "run_chain", "run_chains", "chain_rng"]

# energy-error bound beyond which a trajectory is declared divergent
_DELTA_MAX = 1000.0


class InitializationError(RuntimeError):
    """No finite starting point found within the attempt budget."""


@dataclass(frozen=True)
class SamplerConfig:
    """MCMC protocol settings.

    Defaults follow the estimation protocol used throughout: four chains,
    1000 discarded warmup iterations and 1000 retained draws each.
    """

    n_chains: int = 4
    n_warmup: int = 1000
    n_samples: int = 1000
    seed: int = 0
    target_accept: float = 0.8
    max_tree_depth: int = 10
    algorithm: str = "nuts"  # "nuts" | "rwm"
    init_attempts: int = 100
    n_workers: int = 1

    def __post_init__(self):
        if self.n_chains < 1 or self.n_samples < 1 or self.n_warmup < 0:
            raise ValueError("chain/iteration counts must be positive")
        if not (0.0 < self.target_accept < 1.0):
            raise ValueError("target_accept must be in (0,1)")
        if self.algorithm not in ("nuts", "rwm"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")

    def with_seed(self, seed: int) -> "SamplerConfig":
        return replace(self, seed=seed)


@dataclass
class ChainResult:
    draws: np.ndarray            # (n_samples, dim), unconstrained scale
    divergences: int             # sampling phase only
    warmup_divergences: int
    max_depth_hits: int
    accept_rate: float
    step_size: float
    inv_mass: np.ndarray


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    """Counter-based stream for one chain, derived from (seed, chain)."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(chain,))))


def _initial_state(posterior, rng, attempts):
    for _ in range(attempts):
        q = posterior.initial_point(rng)
        lp, grad = posterior.logp_and_grad(q)
        if np.isfinite(lp) and np.all(np.isfinite(grad)):
            return np.asarray(q, dtype=float), lp, grad
    raise InitializationError(
        f"no finite starting point after {attempts} attempts")


# ---------------------------------------------------------------------------
# warmup schedule (initial fast buffer, doubling slow windows, final fast)
# ---------------------------------------------------------------------------

def _warmup_windows(n_warmup: int):
    """Return (init_buffer, slow window end indices, term_buffer_start)."""
    if n_warmup == 0:
        return 0, [], 0
    init, term, base = 75, 50, 25
    if n_warmup < init + term + base:
        init = max(1, int(0.15 * n_warmup))
        term = max(1, int(0.10 * n_warmup))
        base = n_warmup - init - term
        if base <= 0:
            return n_warmup, [], n_warmup
    ends = []
    start, size = init, base
    while True:
        end = start + size
        # absorb the remainder when the next doubling cannot fit
        if end + 2 * size > n_warmup - term:
            ends.append(n_warmup - term)
            break
        ends.append(end)
        start, size = end, 2 * size
    return init, ends, n_warmup - term


class _DualAveraging:
    """Nesterov dual averaging on log step size."""

    def __init__(self, eps0: float, target: float):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.count = 0
        self.gamma, self.t0, self.kappa = 0.05, 10.0, 0.75

    def update(self, accept_stat: float) -> float:
        self.count += 1
        eta = 1.0 / (self.count + self.t0)
        self.h_bar = (1 - eta) * self.h_bar + eta * (self.target - accept_stat)
        self.log_eps = self.mu - math.sqrt(self.count) / self.gamma * self.h_bar
        w = self.count ** (-self.kappa)
        self.log_eps_bar = (1 - w) * self.log_eps_bar + w * self.log_eps
        return math.exp(self.log_eps)

    def restart(self, eps: float):
        self.mu = math.log(10.0 * eps)
        self.log_eps = math.log(eps)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.count = 0

    @property
    def adapted(self) -> float:
        return math.exp(self.log_eps_bar)


class _Welford:
    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def push(self, x: np.ndarray):
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def variance(self) -> np.ndarray:
        if self.n < 2:
            return np.ones_like(self.mean)
        var = self.m2 / (self.n - 1)
        # shrink toward unit scale, regularized as in common practice
        return var * (self.n / (self.n + 5.0)) + 1e-3 * (5.0 / (self.n + 5.0))


# ---------------------------------------------------------------------------
# NUTS
# ---------------------------------------------------------------------------

def _leapfrog(posterior, q, p, grad, eps, inv_mass):
    p1 = p + 0.5 * eps * grad
    q1 = q + eps * inv_mass * p1
    lp1, grad1 = posterior.logp_and_grad(q1)
    p1 = p1 + 0.5 * eps * grad1
    return q1, p1, lp1, grad1


def _kinetic(p, inv_mass):
    return 0.5 * float(np.dot(p * p, inv_mass))


class _Tree:
    __slots__ = ("q_minus", "p_minus", "g_minus", "q_plus", "p_plus", "g_plus",
                 "q_prop", "lp_prop", "g_prop", "n", "s", "alpha", "n_alpha",
                 "divergent")


def _build_tree(posterior, rng, q, p, grad, log_u, direction, depth, eps,
                inv_mass, joint0):
    t = _Tree()
    if depth == 0:
        q1, p1, lp1, g1 = _leapfrog(posterior, q, p, grad, direction * eps,
                                    inv_mass)
        joint = lp1 - _kinetic(p1, inv_mass) if np.isfinite(lp1) else -np.inf
        t.q_minus = t.q_plus = t.q_prop = q1
        t.p_minus = t.p_plus = p1
        t.g_minus = t.g_plus = t.g_prop = g1
        t.lp_prop = lp1
        t.n = 1 if log_u <= joint else 0
        t.divergent = (joint - log_u) < -_DELTA_MAX
        t.s = 0 if t.divergent else 1
        t.alpha = min(1.0, math.exp(min(0.0, joint - joint0)))
        t.n_alpha = 1
        return t

    t = _build_tree(posterior, rng, q, p, grad, log_u, direction, depth - 1,
                    eps, inv_mass, joint0)
    if t.s == 1:
        if direction == -1:
            t2 = _build_tree(posterior, rng, t.q_minus, t.p_minus, t.g_minus,
                             log_u, direction, depth - 1, eps, inv_mass, joint0)
            t.q_minus, t.p_minus, t.g_minus = t2.q_minus, t2.p_minus, t2.g_minus
        else:
            t2 = _build_tree(posterior, rng, t.q_plus, t.p_plus, t.g_plus,
                             log_u, direction, depth - 1, eps, inv_mass, joint0)
            t.q_plus, t.p_plus, t.g_plus = t2.q_plus, t2.p_plus, t2.g_plus
        if t2.n > 0 and rng.random() < t2.n / max(t.n + t2.n, 1):
            t.q_prop, t.lp_prop, t.g_prop = t2.q_prop, t2.lp_prop, t2.g_prop
        rho = t.q_plus - t.q_minus
        no_uturn = (np.dot(rho, inv_mass * t.p_minus) >= 0
                    and np.dot(rho, inv_mass * t.p_plus) >= 0)
        t.s = t2.s * int(no_uturn)
        t.n += t2.n
        t.alpha += t2.alpha
        t.n_alpha += t2.n_alpha
        t.divergent = t.divergent or t2.divergent
    return t


def _find_reasonable_eps(posterior, rng, q, lp, grad, inv_mass):
    eps = 1.0
    p = rng.standard_normal(len(q)) / np.sqrt(inv_mass)
    joint0 = lp - _kinetic(p, inv_mass)
    _, p1, lp1, _ = _leapfrog(posterior, q, p, grad, eps, inv_mass)
    joint = lp1 - _kinetic(p1, inv_mass) if np.isfinite(lp1) else -np.inf
    log_ratio = joint - joint0
    direction = 1 if log_ratio > math.log(0.5) else -1
    for _ in range(100):
        eps *= 2.0 ** direction
        _, p1, lp1, _ = _leapfrog(posterior, q, p, grad, eps, inv_mass)
        joint = lp1 - _kinetic(p1, inv_mass) if np.isfinite(lp1) else -np.inf
        if direction * (joint - joint0) <= direction * math.log(0.5):
            break
        if eps > 1e7 or eps < 1e-10:
            break
    return max(min(eps, 1e7), 1e-10)


def _run_nuts_chain(posterior, cfg: SamplerConfig, chain: int) -> ChainResult:
    rng = chain_rng(cfg.seed, chain)
    dim = posterior.dim
    q, lp, grad = _initial_state(posterior, rng, cfg.init_attempts)

    inv_mass = np.ones(dim)
    eps = _find_reasonable_eps(posterior, rng, q, lp, grad, inv_mass)
    da = _DualAveraging(eps, cfg.target_accept)
    init_buf, slow_ends, term_start = _warmup_windows(cfg.n_warmup)
    welford = _Welford(dim)
    slow_ends = list(slow_ends)

    draws = np.empty((cfg.n_samples, dim))
    divergences = 0
    warmup_divergences = 0
    max_depth_hits = 0
    accepts = []

    total = cfg.n_warmup + cfg.n_samples
    for it in range(total):
        warming = it < cfg.n_warmup
        p0 = rng.standard_normal(dim) / np.sqrt(inv_mass)
        joint0 = lp - _kinetic(p0, inv_mass)
        log_u = joint0 - rng.exponential()

        q_minus = q_plus = q
        p_minus = p_plus = p0
        g_minus = g_plus = grad
        depth, n, s = 0, 1, 1
        divergent = False
        alpha_sum, n_alpha = 0.0, 0

        while s == 1:
            direction = -1 if rng.random() < 0.5 else 1
            if direction == -1:
                t = _build_tree(posterior, rng, q_minus, p_minus, g_minus,
                                log_u, direction, depth, eps, inv_mass, joint0)
                q_minus, p_minus, g_minus = t.q_minus, t.p_minus, t.g_minus
            else:
                t = _build_tree(posterior, rng, q_plus, p_plus, g_plus,
                                log_u, direction, depth, eps, inv_mass, joint0)
                q_plus, p_plus, g_plus = t.q_plus, t.p_plus, t.g_plus
            if t.s == 1 and rng.random() < min(1.0, t.n / n):
                q, lp, grad = t.q_prop, t.lp_prop, t.g_prop
            n += t.n
            alpha_sum += t.alpha
            n_alpha += t.n_alpha
            divergent = divergent or t.divergent
            rho = q_plus - q_minus
            s = t.s * int(np.dot(rho, inv_mass * p_minus) >= 0) \
                * int(np.dot(rho, inv_mass * p_plus) >= 0)
            depth += 1
            if depth >= cfg.max_tree_depth:
                if not warming:
                    max_depth_hits += 1
                break

        accept_stat = alpha_sum / max(n_alpha, 1)
        if divergent:
            if warming:
                warmup_divergences += 1
            else:
                divergences += 1

        if warming:
            eps = da.update(accept_stat)
            if init_buf <= it < term_start:
                welford.push(q)
            if slow_ends and it + 1 == slow_ends[0]:
                inv_mass = welford.variance()
                welford = _Welford(dim)
                slow_ends.pop(0)
                eps = _find_reasonable_eps(posterior, rng, q, lp, grad, inv_mass)
                da.restart(eps)
            if it + 1 == cfg.n_warmup:
                eps = da.adapted if da.count > 0 else eps
        else:
            accepts.append(accept_stat)
            draws[it - cfg.n_warmup] = q

    return ChainResult(draws=draws, divergences=divergences,
                       warmup_divergences=warmup_divergences,
                       max_depth_hits=max_depth_hits,
                       accept_rate=float(np.mean(accepts)) if accepts else 0.0,
                       step_size=eps, inv_mass=inv_mass)


# ---------------------------------------------------------------------------
# adaptive random-walk Metropolis fallback
# ---------------------------------------------------------------------------

def _run_rwm_chain(posterior, cfg: SamplerConfig, chain: int) -> ChainResult:
    rng = chain_rng(cfg.seed, chain)
    dim = posterior.dim
    q, lp, _ = _initial_state(posterior, rng, cfg.init_attempts)

    scale = np.ones(dim)
    log_eps = math.log(2.38 / math.sqrt(dim))
    target = 0.234
    init_buf, slow_ends, term_start = _warmup_windows(cfg.n_warmup)
    welford = _Welford(dim)
    slow_ends = list(slow_ends)

    draws = np.empty((cfg.n_samples, dim))
    accepts = []
    for it in range(cfg.n_warmup + cfg.n_samples):
        warming = it < cfg.n_warmup
        proposal = q + math.exp(log_eps) * scale * rng.standard_normal(dim)
        lp_new, _ = posterior.logp_and_grad(proposal)
        accept = math.log(rng.random()) < lp_new - lp
        if accept:
            q, lp = proposal, lp_new
        if warming:
            log_eps += (float(accept) - target) * (it + 1) ** (-0.6)
            if init_buf <= it < term_start:
                welford.push(q)
            if slow_ends and it + 1 == slow_ends[0]:
                scale = np.sqrt(welford.variance())
                welford = _Welford(dim)
                slow_ends.pop(0)
        else:
            accepts.append(float(accept))
            draws[it - cfg.n_warmup] = q

    return ChainResult(draws=draws, divergences=0, warmup_divergences=0,
                       max_depth_hits=0,
                       accept_rate=float(np.mean(accepts)) if accepts else 0.0,
                       step_size=math.exp(log_eps), inv_mass=scale ** 2)


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

def run_chain(posterior, cfg: SamplerConfig, chain: int) -> ChainResult:
    if cfg.algorithm == "rwm":
        return _run_rwm_chain(posterior, cfg, chain)
    return _run_nuts_chain(posterior, cfg, chain)


def run_chains(posterior, cfg: SamplerConfig) -> list[ChainResult]:
    """Run all chains; per-chain streams make scheduling irrelevant."""
    if cfg.n_workers > 1 and cfg.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.n_workers, cfg.n_chains)) as ex:
            futures = [ex.submit(run_chain, posterior, cfg, c)
                       for c in range(cfg.n_chains)]
            return [f.result() for f in futures]
    return [run_chain(posterior, cfg, c) for c in range(cfg.n_chains)]
