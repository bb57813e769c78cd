"""Three-step estimator of a quantile regression with an unknown change point.

Step 1   joint grid search: penalized fit at every threshold, keep the best pair.
Step 2   re-estimate the threshold by minimizing the unpenalized risk of the
         Step 1 coefficients over the grid.
Step 3a  penalized refit at that threshold (prediction).
Step 3b  refit with SCAD-type signal-adaptive weights (variable selection).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import CoefVector, Dataset, ThresholdedModel, ThresholdGrid, column_weights, risk_over_grid
from .solver import PenaltySpec, SolveOptions, SolveReport, solve_penalized_qr
from .tuning import TuningConfig, draw_uniforms, select_kappa, select_mu, select_omega

# relative slack under which two Step 1 objectives count as tied
_TIE_RTOL = 1e-10


@dataclass(frozen=True)
class FitConfig:
    """Penalty levels left as ``None`` are chosen by simulation with ``tuning``."""

    grid: ThresholdGrid
    kappa: float | None = None
    omega: float | None = None
    mu: float | None = None
    scad_a: float = 3.7
    iterate: bool = False
    max_outer_iter: int = 10
    tuning: TuningConfig = field(default_factory=TuningConfig)
    solver: SolveOptions = field(default_factory=SolveOptions)

    def __post_init__(self):
        for name in ("kappa", "omega", "mu"):
            v = getattr(self, name)
            if v is not None and not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be a finite nonnegative number")
        if not self.scad_a > 1:
            raise ValueError("scad_a must exceed 1")
        if self.max_outer_iter < 1:
            raise ValueError("max_outer_iter must be >= 1")


@dataclass(frozen=True)
class Step1Result:
    coef: CoefVector
    tau: float
    grid_trace: np.ndarray
    report: SolveReport
    kkt_max: float
    excluded: tuple = ()


@dataclass(frozen=True)
class FitResult:
    step1: ThresholdedModel
    grid_trace: np.ndarray
    step2_tau: float
    skipped_step2: bool
    step3a: CoefVector
    step3b: CoefVector
    step3_tau: float
    final_tau: float | None
    no_change_point: bool
    tau_step3a: float | None
    tau_step3b: float | None
    kappa: float
    omega: float
    mu: float
    scad_weights: np.ndarray
    outer_iterations: int
    reports: dict = field(default_factory=dict, repr=False)

    @property
    def model(self) -> ThresholdedModel | None:
        if self.final_tau is None:
            return None
        return ThresholdedModel(self.step3b, self.final_tau)


def _points(grid) -> np.ndarray:
    return grid.points if isinstance(grid, ThresholdGrid) else np.atleast_1d(np.asarray(grid, dtype=float))


def step1(dataset: Dataset, grid, kappa: float, options: SolveOptions | None = None) -> Step1Result:
    """Penalized fit at each grid point; the smallest threshold wins ties."""
    pts = _points(grid)
    trace = np.full(pts.size, np.nan)
    reports = []
    excluded = []
    for k, tau in enumerate(pts):
        rep = solve_penalized_qr(dataset, float(tau), PenaltySpec(kappa, column_weights(dataset, tau)), options)
        reports.append(rep)
        if rep.status != "converged":
            excluded.append(k)
            warnings.warn(f"grid point {tau!r} excluded from Step 1 (solver status {rep.status})",
                          RuntimeWarning, stacklevel=2)
            continue
        trace[k] = rep.objective
    if np.all(np.isnan(trace)):
        raise RuntimeError("no grid point produced a usable Step 1 solution")
    best = np.nanmin(trace)
    k = int(np.flatnonzero(trace <= best + _TIE_RTOL * max(1.0, abs(best)))[0])
    kkt = max(r.kkt_residual for i, r in enumerate(reports) if i not in excluded)
    return Step1Result(reports[k].coef, float(pts[k]), trace, reports[k], kkt, tuple(excluded))


def step2(dataset: Dataset, coef: CoefVector, grid) -> float | None:
    """Smallest minimizer of the unpenalized risk over the grid; ``None`` if delta is all zero."""
    if coef.delta_is_zero:
        return None
    pts = _points(grid)
    risks = risk_over_grid(dataset, coef, pts)
    return float(pts[int(np.argmin(risks))])


def scad_weights(coef, mu: float, a: float = 3.7) -> np.ndarray:
    """Local linear approximation weights of the SCAD penalty, in [0, 1]."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    if not a > 1:
        raise ValueError("a must exceed 1")
    alpha = coef.alpha if isinstance(coef, CoefVector) else np.asarray(coef, dtype=float)
    m = np.abs(alpha)
    mid = (a * mu - m) / (mu * (a - 1))
    return np.where(m < mu, 1.0, np.where(m > a * mu, 0.0, mid))


def step3a(dataset: Dataset, tau_hat: float, omega: float, options: SolveOptions | None = None) -> SolveReport:
    return solve_penalized_qr(dataset, tau_hat, PenaltySpec(omega, column_weights(dataset, tau_hat)), options)


def step3b(dataset: Dataset, tau_hat: float, mu: float, coef_step3a: CoefVector, scad_a: float = 3.7,
           options: SolveOptions | None = None) -> SolveReport:
    w = scad_weights(coef_step3a, mu, scad_a) if mu > 0 else np.ones(2 * dataset.p)
    return solve_penalized_qr(dataset, tau_hat, PenaltySpec(mu, w * column_weights(dataset, tau_hat)), options)


def fit(dataset: Dataset, config: FitConfig) -> FitResult:
    """Run Steps 1-3, with the optional Step 2 / Step 3 iteration."""
    grid = config.grid
    opts = config.solver
    uniforms = None
    if config.kappa is None or config.omega is None:
        uniforms = draw_uniforms(dataset.n, config.tuning)
    kappa = config.kappa if config.kappa is not None else select_kappa(dataset, grid, config.tuning, uniforms)

    s1 = step1(dataset, grid, kappa, opts)
    tau2 = step2(dataset, s1.coef, grid)
    skipped = tau2 is None
    tau_hat = s1.tau if skipped else tau2

    def levels(tau):
        om = config.omega if config.omega is not None else select_omega(dataset, tau, config.tuning, uniforms)
        m = config.mu if config.mu is not None else select_mu(om, dataset.n, config.tuning)
        return om, m

    def third(tau):
        om, m = levels(tau)
        r3a = step3a(dataset, tau, om, opts)
        w = scad_weights(r3a.coef, m, config.scad_a) if m > 0 else np.ones(2 * dataset.p)
        r3b = step3b(dataset, tau, m, r3a.coef, config.scad_a, opts)
        return om, m, w, r3a, r3b

    omega, mu, w, r3a, r3b = third(tau_hat)
    outer = 1
    if skipped and not r3b.coef.delta_is_zero:
        # Step 2 had no unique minimizer; one re-run with the Step 3b coefficients
        tau_new = step2(dataset, r3b.coef, grid)
        if tau_new != tau_hat:
            tau_hat = tau_new
            omega, mu, w, r3a, r3b = third(tau_hat)
            outer += 1
    if config.iterate:
        while outer < config.max_outer_iter and not r3b.coef.delta_is_zero:
            tau_new = step2(dataset, r3b.coef, grid)
            if tau_new == tau_hat:
                break
            tau_hat = tau_new
            omega, mu, w, r3a, r3b = third(tau_hat)
            outer += 1

    no_change = r3b.coef.delta_is_zero
    return FitResult(
        step1=ThresholdedModel(s1.coef, s1.tau),
        grid_trace=s1.grid_trace,
        step2_tau=s1.tau if skipped else tau2,
        skipped_step2=skipped,
        step3a=r3a.coef,
        step3b=r3b.coef,
        step3_tau=float(tau_hat),
        final_tau=None if no_change else float(tau_hat),
        no_change_point=no_change,
        tau_step3a=step2(dataset, r3a.coef, grid),
        tau_step3b=step2(dataset, r3b.coef, grid),
        kappa=float(kappa), omega=float(omega), mu=float(mu),
        scad_weights=w,
        outer_iterations=outer,
        reports={"step1": s1.report, "step3a": r3a, "step3b": r3b, "step1_kkt_max": s1.kkt_max},
    )
