"""Weighted l1-penalized quantile regression at a fixed threshold.

The problem

    min_a  (1/n) sum_i rho_gamma(y_i - x_i(tau)'a) + sum_j lam * w_j * |a_j|

is solved as a bounded linear program with a primal-dual (Frisch-Newton,
Mehrotra predictor-corrector) interior-point method.  Each penalized
coordinate contributes one pseudo-observation with response 0, design row
``n * lam * w_j * e_j`` and symmetric unit loss, so the penalized problem is
an ordinary asymmetric-weight L1 fit on ``n + #penalized`` rows.  Its dual is

    max_d  y'd   s.t.  A'd = 0,   lower_i <= d_i <= upper_i

with ``[lower, upper] = [gamma - 1, gamma]`` on data rows and ``[-1, 1]`` on
pseudo rows.  After convergence the solution is polished onto the optimal
face (interpolated rows solved exactly, interior pseudo-rows snapped to zero)
so that active sets carry exact zeros.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.optimize import linprog

from .core import CoefVector, Dataset, augmented_design, check_loss

_STEP = 0.99995


@dataclass(frozen=True)
class PenaltySpec:
    """Per-coordinate penalty ``lam * weights_j``; a zero weight leaves the coordinate free."""

    lam: float
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("penalty weights must be finite and >= 0")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def per_coordinate(self) -> np.ndarray:
        return self.lam * self.weights

    @classmethod
    def none(cls, k: int) -> "PenaltySpec":
        return cls(0.0, np.zeros(k))


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-8
    max_iter: int = 200
    zero_clip: float = 1e-9
    polish: bool = True


@dataclass(frozen=True)
class SolveReport:
    coef: CoefVector
    objective: float
    kkt_residual: float
    iterations: int
    status: str  # "converged" | "max_iter" | "degenerate"
    duality_gap: float = 0.0
    nonunique: bool = False
    excluded: tuple = ()
    dual: np.ndarray | None = field(default=None, repr=False)


def penalized_objective(xa: np.ndarray, y: np.ndarray, gamma: float, alpha: np.ndarray,
                        per_coord: np.ndarray) -> float:
    r = y - xa @ alpha
    return float(np.mean(check_loss(r, gamma)) + np.sum(per_coord * np.abs(alpha)))


# ---------------------------------------------------------------------------
# brute-force oracle

def brute_force_penalized_qr(xa, y, gamma: float, per_coord) -> tuple[float, np.ndarray]:
    """Exhaustive vertex search for tiny instances (n <= ~15, k <= 4).

    Some optimal solution has at least ``k`` of its rows "tight": either an
    observation it interpolates or a coordinate it sets to zero.  Every such
    combination is a square linear system; the minimum objective over their
    solutions is the optimum.
    """
    xa = np.asarray(xa, dtype=float)
    y = np.asarray(y, dtype=float)
    per_coord = np.asarray(per_coord, dtype=float)
    n, k = xa.shape
    best_val, best_alpha = np.inf, np.zeros(k)
    for nz in range(k + 1):
        for zeros in itertools.combinations(range(k), nz):
            free = [j for j in range(k) if j not in zeros]
            m = len(free)
            if m == 0:
                cands = np.zeros((1, k))
            else:
                rows = np.array(list(itertools.combinations(range(n), m)))
                if rows.size == 0:
                    continue
                sub = xa[rows][:, :, free]  # (c, m, m)
                rhs = y[rows]  # (c, m)
                det = np.linalg.det(sub)
                scale = np.prod(np.linalg.norm(sub, axis=2), axis=1) + 1e-300
                ok = np.abs(det) > 1e-10 * scale
                if not np.any(ok):
                    continue
                sol = np.linalg.solve(sub[ok], rhs[ok][..., None])[..., 0]
                cands = np.zeros((sol.shape[0], k))
                cands[:, free] = sol
            r = y[None, :] - cands @ xa.T
            vals = np.mean(r * (gamma - (r <= 0)), axis=1) + np.abs(cands) @ per_coord
            i = int(np.argmin(vals))
            if vals[i] < best_val:
                best_val, best_alpha = float(vals[i]), cands[i].copy()
    return best_val, best_alpha


# ---------------------------------------------------------------------------
# interior point

def _step_length(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, _STEP * float(np.min(-v[neg] / dv[neg])))


def _bounded_lp(A, c, lo, up, y0=None, tol=1e-8, max_iter=200, primal_value=None, accept=None):
    """Mehrotra predictor-corrector for  min c'x, A x = A lo_shift, 0 <= x <= u.

    Works on the shifted dual variable ``x = d - lo`` with upper bound
    ``u = up - lo``; the starting point ``x = -lo`` (i.e. ``d = 0``) is exactly
    feasible.  Returns (x, y, iterations, converged, gap).
    """
    k, N = A.shape
    u = up - lo
    x = -lo.copy()
    s = u - x
    b = A @ x
    if y0 is None:
        AAt = A @ A.T
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", linalg.LinAlgWarning)
                y = linalg.solve(AAt, A @ c, assume_a="pos")
        except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError):
            y = linalg.lstsq(AAt, A @ c)[0]
    else:
        y = np.array(y0, dtype=float)
    r = c - A.T @ y
    shift = max(1e-2 * float(np.mean(np.abs(r))), 1e-3) if N else 1.0
    z = np.maximum(r, 0.0) + shift
    w = np.maximum(-r, 0.0) + shift

    accept = tol if accept is None else max(accept, tol)
    best = None
    gap = np.inf
    bscale = max(1.0, float(np.max(np.abs(b), initial=0.0)))
    for it in range(1, max_iter + 1):
        rp = b - A @ x
        rd = c - A.T @ y - z + w
        if primal_value is not None:
            # primal objective at alpha = -y minus dual objective at x
            pval = primal_value(-y)
            dval = -(c @ (x + lo))
            gap = pval - dval
            scale = max(1.0, abs(pval))
            feasible = np.max(np.abs(rp), initial=0.0) <= 1e-9 * bscale
            if feasible and gap <= accept * scale and (best is None or gap < best[4]):
                best = (x, y, it - 1, True, gap)
            if feasible and gap <= tol * scale:
                return x, y, it - 1, True, gap
            if best is not None and it - 1 - best[2] >= 8:
                # stalled while tightening; the accepted iterate stands
                return best
        comp = x @ z + s @ w
        mu = comp / (2 * N)

        theta = x * s / (z * s + w * x)
        At = A * theta
        M = At @ A.T
        try:
            fac = linalg.cho_factor(M, check_finite=False)
            solve = lambda v: linalg.cho_solve(fac, v, check_finite=False)
        except linalg.LinAlgError:
            M = M + 1e-12 * np.trace(M) / k * np.eye(k)
            solve = lambda v: linalg.solve(M, v)

        def direction(rxz, rsw):
            rhs1 = rd - rxz / x + rsw / s
            dy = solve(rp + At @ rhs1)
            dx = theta * (A.T @ dy - rhs1)
            dz = (rxz - z * dx) / x
            dw = (rsw + w * dx) / s
            return dx, dy, dz, dw

        dx, dy, dz, dw = direction(-x * z, -s * w)
        ap = min(_step_length(x, dx), _step_length(s, -dx))
        ad = min(_step_length(z, dz), _step_length(w, dw))
        mu_aff = ((x + ap * dx) @ (z + ad * dz) + (s - ap * dx) @ (w + ad * dw)) / (2 * N)
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        smu = sigma * mu
        dx, dy, dz, dw = direction(smu - x * z - dx * dz, smu - s * w + dx * dw)
        ap = min(_step_length(x, dx), _step_length(s, -dx))
        ad = min(_step_length(z, dz), _step_length(w, dw))
        x = x + ap * dx
        s = s - ap * dx
        y = y + ad * dy
        z = z + ad * dz
        w = w + ad * dw
    if best is not None:
        return best
    return x, y, max_iter, False, gap


def _solve_arrays(xa, y, gamma, per_coord, options: SolveOptions, y0=None):
    """Core solve on raw arrays.  Returns (alpha, iterations, converged, gap, nonunique, dual)."""
    n, k = xa.shape
    if k == 0:
        return np.zeros(0), 0, True, 0.0, False, np.zeros(n)
    pen = np.flatnonzero(per_coord > 0)
    pseudo = np.zeros((pen.size, k))
    pseudo[np.arange(pen.size), pen] = n * per_coord[pen]
    design = np.vstack([xa, pseudo])
    resp = np.concatenate([y, np.zeros(pen.size)])
    lo = np.concatenate([np.full(n, gamma - 1.0), -np.ones(pen.size)])
    up = np.concatenate([np.full(n, gamma), np.ones(pen.size)])

    def primal_value(alpha):
        return n * penalized_objective(xa, y, gamma, alpha, per_coord)

    # working problem: min (-resp)'x with x = d - lo
    A = design.T
    c = -resp
    yscale = max(1.0, float(np.max(np.abs(y), initial=0.0)))
    y0_scaled = None if y0 is None else -np.asarray(y0, dtype=float) / yscale
    # drive the gap well below tol: polishing needs the optimal face resolved
    target = options.tol * 1e-4 if options.polish else options.tol
    x, ydual, iters, converged, gap = _bounded_lp(
        A, c / yscale, lo, up, y0=y0_scaled, tol=target, max_iter=options.max_iter,
        primal_value=lambda a: primal_value(a * yscale) / yscale, accept=options.tol,
    )
    alpha = -ydual * yscale
    gap *= yscale
    d = x + lo  # dual vector in original bounds
    nonunique = False
    if options.polish:
        base = penalized_objective(xa, y, gamma, alpha, per_coord)
        dval = float(resp @ d) / n
        bound = max(base, dval + options.tol * max(1.0, abs(dval)))
        alpha, nonunique = _polish(xa, y, gamma, per_coord, alpha, d, pen, bound)
    clip = options.zero_clip * max(1.0, float(np.max(np.abs(alpha), initial=0.0)))
    alpha = np.where(np.abs(alpha) <= clip, 0.0, alpha)
    return alpha, iters, converged, gap, nonunique, d


def _polish(xa, y, gamma, per_coord, alpha, d, pen, bound):
    """Move an interior-point solution onto its optimal face.

    Near-zero penalized coordinates are set to zero and near-zero residuals
    are interpolated exactly.  The polished point is kept only if its
    objective stays within ``bound`` (the level certified by the dual).
    """
    n, k = xa.shape
    ascale = 1.0 + float(np.max(np.abs(alpha), initial=0.0))
    yscale = 1.0 + float(np.max(np.abs(y), initial=0.0))
    zero = np.zeros(k, dtype=bool)
    zero[pen[np.abs(alpha[pen]) <= 1e-6 * ascale]] = True
    free = np.flatnonzero(~zero)
    r = np.abs(y - xa @ alpha)
    near = r <= 1e-6 * yscale
    rel = (d[:n] - (gamma - 1.0))
    interior = (rel > 1e-9) & (rel < 1.0 - 1e-9)
    by_size = np.argsort(r, kind="stable")
    # candidate interpolation sets, most to least trusting of the duals
    row_sets = [np.flatnonzero(near & interior), by_size[: min(free.size, int(near.sum()))],
                np.flatnonzero(r <= 1e-9 * yscale)]
    trials = []
    nonunique = False
    for rows in row_sets:
        cand = np.zeros(k)
        if free.size and rows.size:
            sub = xa[np.ix_(rows, free)]
            # correction from the interior point keeps unresolved directions where they were
            step, _, rank, _ = np.linalg.lstsq(sub, y[rows] - sub @ alpha[free], rcond=None)
            cand[free] = alpha[free] + step
            if np.max(np.abs(y[rows] - xa[rows] @ cand)) <= 1e-12 * yscale:
                trials.append((cand, rank < free.size))
        elif not free.size:
            trials.append((cand, False))
    trials.append((np.where(zero, 0.0, alpha), True))
    for cand, nonunique in trials:
        if penalized_objective(xa, y, gamma, cand, per_coord) <= bound:
            return cand, nonunique
    return alpha, True


# ---------------------------------------------------------------------------
# public API

def _kkt_from_arrays(xa, y, gamma, alpha, per_coord, psi_hint=None, zero_tol=1e-9):
    n, k = xa.shape
    r = y - xa @ alpha
    rtol = zero_tol * (1.0 + float(np.max(np.abs(y), initial=0.0)))
    free = np.abs(r) <= rtol
    psi = gamma - (r < 0).astype(float)
    nz = alpha != 0
    target_lo = np.where(nz, np.sign(alpha) * per_coord, -per_coord)
    target_hi = np.where(nz, np.sign(alpha) * per_coord, per_coord)

    def dist(g):
        return float(np.max(np.maximum(np.maximum(target_lo - g, g - target_hi), 0.0), initial=0.0))

    if not np.any(free):
        return dist(xa.T @ psi / n)
    if psi_hint is not None:
        trial = psi.copy()
        trial[free] = np.clip(psi_hint[free], gamma - 1.0, gamma)
        quick = dist(xa.T @ trial / n)
        if quick <= 1e-9:
            return quick
    fixed = xa[~free].T @ psi[~free] / n
    xf = xa[free].T / n  # k x m
    m = xf.shape[1]
    # variables (psi_free, t); minimize t
    cost = np.zeros(m + 1)
    cost[-1] = 1.0
    ones = -np.ones((k, 1))
    a_ub = np.vstack([np.hstack([xf, ones]), np.hstack([-xf, ones])])
    b_ub = np.concatenate([target_hi - fixed, fixed - target_lo])
    bounds = [(gamma - 1.0, gamma)] * m + [(0.0, None)]
    res = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        return dist(xa.T @ psi / n)
    return max(float(res.x[-1]), 0.0)


def kkt_residual(dataset: Dataset, tau: float, penalty: PenaltySpec, coef, zero_tol: float = 1e-9,
                 psi_hint=None) -> float:
    """Distance of the loss score from the penalty's subdifferential.

    Observations with (numerically) zero residual carry a free score in
    ``[gamma - 1, gamma]``; the best choice is found by a small LP.
    """
    alpha = coef.alpha if isinstance(coef, CoefVector) else np.asarray(coef, dtype=float)
    xa = augmented_design(dataset, tau)
    return _kkt_from_arrays(xa, dataset.y, dataset.gamma, alpha, penalty.per_coordinate,
                            psi_hint=psi_hint, zero_tol=zero_tol)


def solve_penalized_qr(dataset: Dataset, tau: float, penalty: PenaltySpec,
                       options: SolveOptions | None = None, warm_start: SolveReport | None = None) -> SolveReport:
    """Global minimizer of the weighted l1-penalized check loss at threshold ``tau``."""
    options = options or SolveOptions()
    xa = augmented_design(dataset, tau)
    k = xa.shape[1]
    per_coord = penalty.per_coordinate
    if per_coord.shape[0] != k:
        raise ValueError(f"penalty has {per_coord.shape[0]} weights, expected {k}")
    return _report(_solve_design(xa, dataset.y, dataset.gamma, per_coord, options, warm_start))


def _solve_design(xa, y, gamma, per_coord, options, warm_start=None) -> dict:
    n, k = xa.shape
    dead = (per_coord == 0) & ~np.any(xa != 0, axis=0)
    keep = np.flatnonzero(~dead)
    y0 = None
    if warm_start is not None:
        y0 = warm_start.coef.alpha[keep]
    a_keep, iters, converged, gap, nonunique, dual = _solve_arrays(
        xa[:, keep], y, gamma, per_coord[keep], options, y0=y0)
    alpha = np.zeros(k)
    alpha[keep] = a_keep
    if not converged:
        status = "max_iter"
    elif dead.any():
        status = "degenerate"
    else:
        status = "converged"
    return dict(
        alpha=alpha,
        objective=penalized_objective(xa, y, gamma, alpha, per_coord),
        kkt_residual=_kkt_from_arrays(xa, y, gamma, alpha, per_coord, psi_hint=dual[:n]),
        iterations=iters, status=status, duality_gap=float(gap) / n, nonunique=bool(nonunique),
        excluded=tuple(int(j) for j in np.flatnonzero(dead)), dual=dual[:n].copy(),
    )


def _report(out: dict) -> SolveReport:
    out = dict(out)
    return SolveReport(coef=CoefVector.from_alpha(out.pop("alpha")), **out)


def solve_restricted_qr(dataset: Dataset, tau: float, support, gamma: float | None = None,
                        options: SolveOptions | None = None, return_report: bool = False):
    """Unpenalized quantile regression using only the augmented columns in ``support`` (0-based)."""
    options = options or SolveOptions()
    g = dataset.gamma if gamma is None else float(gamma)
    support = sorted(int(j) for j in support)
    xa_full = augmented_design(dataset, tau)
    k = xa_full.shape[1]
    if any(j < 0 or j >= k for j in support):
        raise ValueError("support indices out of range")
    alpha = np.zeros(k)
    if not support:
        obj = penalized_objective(xa_full, dataset.y, g, alpha, np.zeros(k))
        rep = SolveReport(CoefVector.from_alpha(alpha), obj, 0.0, 0, "converged")
        return rep if return_report else rep.coef
    sub = xa_full[:, support]
    out = _solve_design(sub, dataset.y, g, np.zeros(len(support)), options)
    alpha[support] = out["alpha"]
    if np.linalg.matrix_rank(sub) < len(support):
        out["status"] = "degenerate"
        warnings.warn("restricted design is rank deficient", RuntimeWarning, stacklevel=2)
    out["alpha"] = alpha
    out["objective"] = penalized_objective(xa_full, dataset.y, g, alpha, np.zeros(k))
    out["excluded"] = tuple(support[j] for j in out["excluded"])
    rep = _report(out)
    return rep if return_report else rep.coef
