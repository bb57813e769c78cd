"""Confidence intervals for the change point.

``n * (tau_hat - tau0)`` converges to the smallest minimizer of a two-sided
compound Poisson process ``M(h)``: jumps arrive at rate ``f_Q(tau0)`` on each
side, and a jump adds the change in check loss caused by moving one
observation across the threshold.  The interval is read off simulated
minimizers,

    [tau_hat + h_lo / n,  tau_hat + h_hi / n].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .core import CoefVector, Dataset, check_loss, residuals


@dataclass(frozen=True)
class CIConfig:
    level: float = 0.95
    B: int = 1000
    h_bar: float = 0.5
    seed: int = 0
    bandwidth_override: float | None = None
    source: str = "step1"  # residuals/delta behind the jump pools

    def __post_init__(self):
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.B < 1:
            raise ValueError("B must be positive")
        if not self.h_bar > 0:
            raise ValueError("h_bar must be positive")
        if self.source not in ("step1", "step3a", "step3b"):
            raise ValueError(f"unknown residual source {self.source!r}")


@dataclass(frozen=True)
class CompoundPoissonDraw:
    h: float
    value: float = 0.0
    saturated: bool = False


@dataclass(frozen=True)
class ConfidenceInterval:
    lo: float
    hi: float
    tau_hat: float
    rate: float
    draws: np.ndarray
    saturated: int = 0


def rule_of_thumb_bandwidth(q) -> float:
    """1.06 * min(sd, IQR / 1.34) * n^(-1/5), normal reference rule."""
    q = np.sort(np.asarray(q, dtype=float))
    s = np.std(q, ddof=1)
    q75, q25 = np.percentile(q, [75, 25])
    return 1.06 * min(s, (q75 - q25) / 1.34) * q.size ** (-0.2)


def kde_rate(q, at: float, bandwidth_override: float | None = None) -> float:
    """Gaussian kernel density estimate of ``q`` at ``at``."""
    # sorted so the estimate does not depend on row order
    q = np.sort(np.asarray(q, dtype=float))
    if q.size < 2:
        raise ValueError("need at least two threshold observations")
    h = rule_of_thumb_bandwidth(q) if bandwidth_override is None else float(bandwidth_override)
    if not h > 0:
        raise ValueError("bandwidth is zero; the threshold variable has no spread")
    return float(np.sum(norm.pdf((at - q) / h)) / (q.size * h))


def simulate_poisson_jumps(rate: float, horizon: float, rng) -> np.ndarray:
    """Jump times in (0, horizon] from Exponential(rate) gaps, -log(eps) / rate."""
    if not (rate > 0 and horizon > 0):
        raise ValueError("rate and horizon must be positive")
    out = []
    t = 0.0
    chunk = int(rate * horizon + 4 * np.sqrt(rate * horizon)) + 8
    while True:
        eps = rng.random(chunk)
        times = t + np.cumsum(-np.log(eps) / rate)
        stop = np.searchsorted(times, horizon, side="right")
        out.append(times[:stop])
        if stop < chunk:
            break
        t = times[-1]
    return np.concatenate(out)


def jump_magnitude_samples(u, x_delta, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Loss changes from shifting each residual by the estimated jump ``x_i'delta``.

    ``rho1`` (left of the change point) uses ``u - x'delta``; ``rho2`` uses
    ``u + x'delta``.
    """
    u = np.asarray(u, dtype=float)
    xd = np.asarray(x_delta, dtype=float)
    base = check_loss(u, gamma)
    return check_loss(u - xd, gamma) - base, check_loss(u + xd, gamma) - base


def pools_from_fit(dataset: Dataset, coef: CoefVector, tau: float) -> tuple[np.ndarray, np.ndarray]:
    u = residuals(dataset, coef, tau)
    return jump_magnitude_samples(u, dataset.x @ coef.delta, dataset.gamma)


def simulate_path(rate: float, rho1_pool, rho2_pool, horizon: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """One two-sided path as (h, M(h)) at h = 0 and at every jump, in ascending h.

    Left of zero the value at -t counts every left jump up to and including
    t; right of zero the value at t counts every right jump up to and
    including t.
    """
    rho1_pool = np.asarray(rho1_pool, dtype=float)
    rho2_pool = np.asarray(rho2_pool, dtype=float)
    if rho1_pool.size == 0 or rho2_pool.size == 0:
        raise ValueError("jump pools must be nonempty")
    left = simulate_poisson_jumps(rate, horizon, rng)
    right = simulate_poisson_jumps(rate, horizon, rng)
    m_left = np.cumsum(rho1_pool[rng.integers(0, rho1_pool.size, left.size)])
    m_right = np.cumsum(rho2_pool[rng.integers(0, rho2_pool.size, right.size)])
    hs = np.concatenate([-left[::-1], [0.0], right])
    ms = np.concatenate([m_left[::-1], [0.0], m_right])
    return hs, ms


def simulate_path_minimizer(rate: float, rho1_pool, rho2_pool, horizon: float, rng) -> CompoundPoissonDraw:
    """Smallest minimizer of one simulated path; flagged when it sits on the outermost jump."""
    hs, ms = simulate_path(rate, rho1_pool, rho2_pool, horizon, rng)
    k = int(np.argmin(ms))  # first occurrence, so ties go to the smallest h
    zero = int(np.flatnonzero(hs == 0.0)[-1]) if hs.size > 1 else 0
    saturated = (k == 0 and zero > 0) or (k == hs.size - 1 and k > zero)
    return CompoundPoissonDraw(h=float(hs[k]), value=float(ms[k]), saturated=bool(saturated))


def interval_from_draws(tau_hat: float, n: int, draws, level: float) -> tuple[float, float]:
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(np.asarray(draws, dtype=float), [a, 1.0 - a])
    return tau_hat + lo / n, tau_hat + hi / n


def ci_from_pools(q, tau_hat: float, rho1, rho2, config: CIConfig) -> ConfidenceInterval:
    """Interval around ``tau_hat`` from given jump pools; the density of ``q`` sets the jump rate."""
    rho1 = np.sort(np.asarray(rho1, dtype=float))
    rho2 = np.sort(np.asarray(rho2, dtype=float))
    if not (np.any(rho1 != 0) or np.any(rho2 != 0)):
        raise ValueError("jump pools are identically zero; the interval is undefined")
    n = np.asarray(q).size
    rate = kde_rate(q, tau_hat, config.bandwidth_override)
    horizon = config.h_bar * n
    hs = np.empty(config.B)
    sat = 0
    for b in range(config.B):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, b]))
        d = simulate_path_minimizer(rate, rho1, rho2, horizon, rng)
        hs[b] = d.h
        sat += d.saturated
    lo, hi = interval_from_draws(tau_hat, n, hs, config.level)
    return ConfidenceInterval(lo, hi, tau_hat, rate, hs, sat)


def confidence_interval(dataset: Dataset, fit, config: CIConfig | None = None) -> ConfidenceInterval:
    """Interval for the change point of a fitted model (see ``estimator.fit``).

    The centre is the Step 2 estimate for the default Step 1 residual source
    and the re-estimated threshold for the Step 3 sources.
    """
    config = config or CIConfig()
    if config.source == "step1":
        coef, tau_fit, centre = fit.step1.coef, fit.step1.tau, fit.step2_tau
    elif config.source == "step3a":
        coef, tau_fit, centre = fit.step3a, fit.step3_tau, fit.tau_step3a
    else:
        coef, tau_fit, centre = fit.step3b, fit.step3_tau, fit.tau_step3b
    if fit.no_change_point or coef.delta_is_zero or centre is None:
        raise ValueError("CI undefined when the estimated delta is zero (no change point)")
    rho1, rho2 = pools_from_fit(dataset, coef, tau_fit)
    return ci_from_pools(dataset.q, centre, rho1, rho2, config)
