"""Domain types and shared primitives for threshold quantile regression.

The model is ``y = x'beta + x'delta * 1{q > tau} + u`` where the conditional
gamma-quantile of ``u`` is zero.  Coefficients are stored as the stacked
vector ``alpha = (beta, delta)`` of length ``2p``; the matching regressor for a
given threshold is the augmented row ``(x, x * 1{q > tau})``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Response ``y``, covariates ``x`` (n x p), threshold variable ``q``.

    An intercept, when wanted, has to be a column of ones in ``x``; nothing is
    added automatically.
    """

    y: np.ndarray
    x: np.ndarray
    q: np.ndarray
    gamma: float

    def __post_init__(self):
        y = _frozen(self.y).reshape(-1)
        x = _frozen(self.x)
        if x.ndim == 1:
            x = _frozen(x.reshape(-1, 1))
        q = _frozen(self.q).reshape(-1)
        n = y.shape[0]
        if n < 2:
            raise ValueError("need at least two observations")
        if x.ndim != 2 or x.shape[0] != n or x.shape[1] < 1:
            raise ValueError(f"x must be {n} x p with p >= 1, got shape {x.shape}")
        if q.shape[0] != n:
            raise ValueError(f"q has length {q.shape[0]}, expected {n}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x)) and np.all(np.isfinite(q))):
            raise ValueError("all entries of y, x and q must be finite")
        if not 0.0 < float(self.gamma) < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.y[rows], self.x[rows], self.q[rows], self.gamma)


@dataclass(frozen=True)
class CoefVector:
    """Stacked coefficients ``alpha = (beta, delta)``."""

    beta: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        beta = _frozen(self.beta).reshape(-1)
        delta = _frozen(self.delta).reshape(-1)
        if beta.shape != delta.shape:
            raise ValueError("beta and delta must have the same length")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "delta", delta)

    @classmethod
    def from_alpha(cls, alpha) -> "CoefVector":
        alpha = np.asarray(alpha, dtype=float).reshape(-1)
        if alpha.size % 2:
            raise ValueError("alpha must have even length 2p")
        p = alpha.size // 2
        return cls(alpha[:p], alpha[p:])

    @classmethod
    def zeros(cls, p: int) -> "CoefVector":
        return cls(np.zeros(p), np.zeros(p))

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    @property
    def alpha(self) -> np.ndarray:
        return np.concatenate([self.beta, self.delta])

    def alpha_j(self, j: int) -> float:
        """1-based accessor: ``beta_j`` for j <= p, ``delta_{j-p}`` otherwise."""
        if not 1 <= j <= 2 * self.p:
            raise IndexError(j)
        return float(self.beta[j - 1] if j <= self.p else self.delta[j - self.p - 1])

    @property
    def active_set(self) -> tuple:
        """0-based indices of exactly nonzero entries of alpha."""
        return tuple(int(j) for j in np.flatnonzero(self.alpha != 0.0))

    @property
    def delta_is_zero(self) -> bool:
        return not np.any(self.delta != 0.0)


@dataclass(frozen=True)
class ThresholdedModel:
    coef: CoefVector
    tau: float


@dataclass(frozen=True)
class ThresholdGrid:
    points: np.ndarray
    provenance: str = "observations"

    def __post_init__(self):
        pts = _frozen(self.points).reshape(-1)
        if pts.size == 0:
            raise ValueError("threshold grid is empty")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        if self.provenance not in ("observations", "equispaced", "custom"):
            raise ValueError(f"unknown grid provenance {self.provenance!r}")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __iter__(self):
        return iter(self.points.tolist())

    @classmethod
    def from_observations(cls, q, lower: float = 0.15, upper: float = 0.85) -> "ThresholdGrid":
        """Distinct values of ``q`` between its ``lower`` and ``upper`` empirical quantiles."""
        q = np.asarray(q, dtype=float)
        lo, hi = np.quantile(q, [lower, upper])
        pts = np.unique(q[(q >= lo) & (q <= hi)])
        return cls(pts, "observations")

    @classmethod
    def equispaced(cls, start: float, stop: float, num: int, q=None) -> "ThresholdGrid":
        pts = np.linspace(start, stop, int(num))
        if q is not None:
            q = np.asarray(q, dtype=float)
            if pts[0] < q.min() or pts[-1] > q.max():
                raise ValueError("equispaced grid must stay within [min(q), max(q)]")
        return cls(pts, "equispaced")


def check_loss(u, gamma: float):
    """Quantile check loss ``u * (gamma - 1{u <= 0})``; works elementwise."""
    u = np.asarray(u, dtype=float)
    out = u * (gamma - (u <= 0.0))
    return float(out) if out.ndim == 0 else out


def augmented_row(x_i, q_i: float, tau: float) -> np.ndarray:
    x_i = np.asarray(x_i, dtype=float).reshape(-1)
    return np.concatenate([x_i, x_i * float(q_i > tau)])


def augmented_design(dataset: Dataset, tau: float) -> np.ndarray:
    """The n x 2p matrix with rows ``(x_i, x_i * 1{q_i > tau})``."""
    above = (dataset.q > tau).astype(float)
    return np.hstack([dataset.x, dataset.x * above[:, None]])


def column_weights(dataset: Dataset, tau: float) -> np.ndarray:
    """Root mean square of each augmented column, the penalty normalizers."""
    xa = augmented_design(dataset, tau)
    return np.sqrt(np.mean(xa ** 2, axis=0))


def _alpha_of(model_or_coef) -> np.ndarray:
    if isinstance(model_or_coef, ThresholdedModel):
        return model_or_coef.coef.alpha
    if isinstance(model_or_coef, CoefVector):
        return model_or_coef.alpha
    return np.asarray(model_or_coef, dtype=float).reshape(-1)


def residuals(dataset: Dataset, coef, tau: float) -> np.ndarray:
    alpha = _alpha_of(coef)
    if alpha.shape[0] != 2 * dataset.p:
        raise ValueError(f"coefficient length {alpha.shape[0]} does not match 2p = {2 * dataset.p}")
    return dataset.y - augmented_design(dataset, tau) @ alpha


def empirical_risk(dataset: Dataset, model: ThresholdedModel, tau: float | None = None) -> float:
    """Mean check loss of the residuals at ``model`` (``tau`` overrides ``model.tau``)."""
    t = model.tau if tau is None else tau
    return float(np.mean(check_loss(residuals(dataset, model.coef, t), dataset.gamma)))


def risk_over_grid(dataset: Dataset, coef: CoefVector, grid: Sequence[float]) -> np.ndarray:
    """Empirical risk of a fixed coefficient vector at every grid point."""
    return np.array([empirical_risk(dataset, ThresholdedModel(coef, float(t))) for t in grid])
