"""Penalty levels from the simulated score process.

For uniforms ``U_1..U_n`` the normalized score at threshold ``tau`` is

    Lambda(tau) = max_j | mean_i X_ij(tau) * (gamma - 1{U_i <= gamma}) | / D_j(tau)

The Step 1 level is ``c1`` times an upper quantile of ``sup_tau Lambda(tau)``;
the Step 3 levels use the same quantile of ``Lambda`` at the estimated
threshold only, and ``mu = c2 * omega``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import Dataset, ThresholdGrid


@dataclass(frozen=True)
class TuningConfig:
    c1: float = 1.1
    c2: float | None = None  # None -> log(log(n))
    eps_star: float = 0.1
    n_sims: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.c1 <= 0:
            raise ValueError("c1 must be positive")
        if not 0 < self.eps_star < 1:
            raise ValueError("eps_star must lie in (0, 1)")
        if self.n_sims < 1:
            raise ValueError("n_sims must be at least 1")
        if self.n_sims < 100:
            warnings.warn("fewer than 100 simulations gives a noisy quantile", RuntimeWarning, stacklevel=2)

    def c2_for(self, n: int) -> float:
        if self.c2 is not None:
            return float(self.c2)
        if n <= math.e:
            raise ValueError(f"log(log(n)) is not positive for n = {n}; pass an explicit c2")
        return math.log(math.log(n))


def draw_uniforms(n: int, config: TuningConfig) -> np.ndarray:
    """(n_sims, n) uniforms; row k comes from its own substream (seed, k)."""
    out = np.empty((config.n_sims, n))
    for k in range(config.n_sims):
        out[k] = np.random.default_rng(np.random.SeedSequence([config.seed, k])).random(n)
    return out


def _as_points(grid) -> np.ndarray:
    if isinstance(grid, ThresholdGrid):
        return grid.points
    return np.atleast_1d(np.asarray(grid, dtype=float))


def lambda_matrix(dataset: Dataset, grid, uniforms) -> np.ndarray:
    """Lambda(tau) for every row of ``uniforms`` (S x n) and every grid point; shape (S, G)."""
    u = np.atleast_2d(np.asarray(uniforms, dtype=float))
    if u.shape[1] != dataset.n:
        raise ValueError(f"need {dataset.n} uniforms per draw, got {u.shape[1]}")
    n, x, g = dataset.n, dataset.x, dataset.gamma
    score = g - (u <= g).astype(float)
    base = np.abs(score @ x) / n
    d_base = np.sqrt(np.mean(x ** 2, axis=0))
    ok = d_base > 0
    base_max = np.max(base[:, ok] / d_base[ok], axis=1, initial=0.0)
    pts = _as_points(grid)
    out = np.empty((u.shape[0], pts.size))
    for k, tau in enumerate(pts):
        above = dataset.q > tau
        xs = x * above[:, None]
        d_shift = np.sqrt(np.mean(xs ** 2, axis=0))
        keep = d_shift > 0
        shift = np.abs(score @ xs[:, keep]) / n / d_shift[keep]
        out[:, k] = np.maximum(base_max, np.max(shift, axis=1, initial=0.0))
    return out


def lambda_process(dataset: Dataset, grid, uniforms) -> tuple[float, np.ndarray]:
    """One draw of the process: (sup over the grid, per-point values)."""
    per_tau = lambda_matrix(dataset, grid, np.asarray(uniforms, dtype=float)[None, :])[0]
    return float(np.max(per_tau)), per_tau


def upper_order_statistic(values, eps_star: float) -> float:
    """Empirical (1 - eps_star)-quantile as the ceil((1 - eps_star) * S)-th order statistic."""
    v = np.sort(np.asarray(values, dtype=float))
    idx = math.ceil((1.0 - eps_star) * v.size - 1e-9)
    return float(v[min(max(idx, 1), v.size) - 1])


def select_kappa(dataset: Dataset, grid, config: TuningConfig | None = None, uniforms=None) -> float:
    config = config or TuningConfig()
    u = draw_uniforms(dataset.n, config) if uniforms is None else uniforms
    sups = np.max(lambda_matrix(dataset, grid, u), axis=1)
    return config.c1 * upper_order_statistic(sups, config.eps_star)


def select_omega(dataset: Dataset, tau_hat: float, config: TuningConfig | None = None, uniforms=None) -> float:
    config = config or TuningConfig()
    u = draw_uniforms(dataset.n, config) if uniforms is None else uniforms
    vals = lambda_matrix(dataset, [tau_hat], u)[:, 0]
    return config.c1 * upper_order_statistic(vals, config.eps_star)


def select_mu(omega: float, n: int, config: TuningConfig | None = None) -> float:
    config = config or TuningConfig()
    return config.c2_for(n) * omega
