"""Monte Carlo experiments for the change-point quantile estimator.

Data follow

    Y = X'(beta0 + xi10 U) + 1{Q > tau0} X'(delta0 + xi20 U),   X = (1, Z')'

with ``Z ~ N(0, Sigma)``, ``Sigma_ij = rho^|i-j|``.  The gamma-quantile truth is
``beta_gamma = beta0 + xi10 Quant_gamma(U)`` and likewise for delta.

Each replication fits the three-step estimator and two infeasible oracles
(Oracle 1 knows the active set and tau0, Oracle 2 only the active set) and
records excess risk, prediction error, coefficient MSE, threshold error, CI
coverage and selection outcomes for every row.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.stats import norm

from .core import CoefVector, Dataset, ThresholdedModel, ThresholdGrid, augmented_design, check_loss
from .estimator import FitConfig, fit
from .inference import CIConfig, ci_from_pools, pools_from_fit
from .solver import solve_restricted_qr
from .tuning import TuningConfig

log = logging.getLogger(__name__)

ROWS = ("oracle1", "oracle2", "step1", "step2", "step3a", "step3b")
Q_DISTS = ("uniform01", "standard_normal", "chi_squared_1")


@dataclass(frozen=True)
class DGPSpec:
    n: int
    p: int
    tau0: float
    beta0: tuple
    delta0: tuple
    xi10: tuple
    xi20: tuple
    gamma: float
    q_dist: str = "uniform01"
    error_dist: str = "normal"
    error_scale: float = 0.5
    corr_rho: float = 0.5

    def __post_init__(self):
        for name in ("beta0", "delta0", "xi10", "xi20"):
            v = tuple(float(a) for a in getattr(self, name))
            if len(v) != self.p:
                raise ValueError(f"{name} must have length p = {self.p}")
            object.__setattr__(self, name, v)
        if not abs(self.corr_rho) < 1:
            raise ValueError("corr_rho must lie in (-1, 1)")
        if self.q_dist not in Q_DISTS:
            raise ValueError(f"q_dist must be one of {Q_DISTS}")
        if self.error_dist not in ("normal", "cauchy"):
            raise ValueError("error_dist must be 'normal' or 'cauchy'")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.error_scale >= 0:
            raise ValueError("error_scale must be nonnegative")

    def error_quantile(self, level: float) -> float:
        if self.error_scale == 0:
            return 0.0
        if self.error_dist == "normal":
            return float(norm.ppf(level, scale=self.error_scale))
        return self.error_scale * math.tan(math.pi * (level - 0.5))

    @property
    def truth(self) -> ThresholdedModel:
        qu = self.error_quantile(self.gamma)
        beta = np.asarray(self.beta0) + np.asarray(self.xi10) * qu
        delta = np.asarray(self.delta0) + np.asarray(self.xi20) * qu
        return ThresholdedModel(CoefVector(beta, delta), self.tau0)

    @property
    def has_change(self) -> bool:
        return not self.truth.coef.delta_is_zero

    @classmethod
    def baseline(cls, n: int = 200, p: int = 50, gamma: float = 0.5, tau0: float = 0.5, **kw) -> "DGPSpec":
        """Design with one heteroskedastic regressor whose effect shifts by 1 above tau0."""
        scale = kw.get("error_scale", 0.5)
        probe = cls(n, p, tau0, (0.0,) * p, (0.0,) * p, (0.0,) * p, (0.0,) * p, gamma, **kw)
        beta0 = np.zeros(p)
        beta0[1] = probe.error_quantile(0.75) if scale else 0.0
        delta0 = np.zeros(p)
        delta0[1] = 1.0
        xi10 = np.zeros(p)
        xi10[1] = 1.0
        return cls(n, p, tau0, tuple(beta0), tuple(delta0), tuple(xi10), (0.0,) * p, gamma, **kw)

    @classmethod
    def no_change(cls, n: int = 200, p: int = 50, gamma: float = 0.75, **kw) -> "DGPSpec":
        base = cls.baseline(n, p, gamma, **kw)
        return replace(base, delta0=(0.0,) * p)


def _draw_q(spec: DGPSpec, rng, size: int) -> np.ndarray:
    if spec.q_dist == "uniform01":
        return rng.uniform(size=size)
    if spec.q_dist == "standard_normal":
        return rng.standard_normal(size)
    return rng.chisquare(1, size)


def _draw(spec: DGPSpec, rng, size: int):
    eps = rng.standard_normal((size, spec.p - 1))
    z = np.empty_like(eps)
    if spec.p > 1:
        z[:, 0] = eps[:, 0]
        c = math.sqrt(1.0 - spec.corr_rho ** 2)
        for k in range(1, spec.p - 1):
            z[:, k] = spec.corr_rho * z[:, k - 1] + c * eps[:, k]
    x = np.hstack([np.ones((size, 1)), z])
    q = _draw_q(spec, rng, size)
    if spec.error_dist == "normal":
        u = rng.normal(scale=spec.error_scale, size=size)
    else:
        u = spec.error_scale * rng.standard_cauchy(size)
    beta = np.asarray(spec.beta0) + np.outer(u, spec.xi10)
    delta = np.asarray(spec.delta0) + np.outer(u, spec.xi20)
    y = np.sum(x * beta, axis=1) + (q > spec.tau0) * np.sum(x * delta, axis=1)
    return y, x, q


def generate(spec: DGPSpec, rng) -> tuple[Dataset, ThresholdedModel]:
    y, x, q = _draw(spec, rng, spec.n)
    return Dataset(y, x, q, spec.gamma), spec.truth


def _fitted(x, q, model: ThresholdedModel):
    coef = model.coef
    return x @ coef.beta + (q > model.tau) * (x @ coef.delta)


def _excess_on(sample, model, truth, gamma):
    y, x, q = sample
    return float(np.mean(check_loss(y - _fitted(x, q, model), gamma) - check_loss(y - _fitted(x, q, truth), gamma)))


def _pred_on(sample, model, truth):
    _, x, q = sample
    return float(np.sqrt(np.mean((_fitted(x, q, model) - _fitted(x, q, truth)) ** 2)))


def excess_risk_mc(fit_model: ThresholdedModel, truth: ThresholdedModel, spec: DGPSpec, S: int, rng) -> float:
    """Average check-loss gap to the truth over ``S`` fresh draws."""
    return _excess_on(_draw(spec, rng, S), fit_model, truth, spec.gamma)


def prediction_error_mc(fit_model: ThresholdedModel, truth: ThresholdedModel, spec: DGPSpec, S: int, rng) -> float:
    """Root mean squared gap between fitted and true conditional quantiles."""
    return _pred_on(_draw(spec, rng, S), fit_model, truth)


@dataclass(frozen=True)
class RowMetrics:
    excess_risk: float
    pred_error: float
    n_selected: float
    mse: float
    mse_active: float
    mse_inactive: float
    n_selected_delta: float
    mse_delta: float
    tau_hat: float
    tau_error: float
    ci_lo: float
    ci_hi: float
    ci_covered: float
    oracle_selected: float
    no_change: float


@dataclass
class ReplicationSummary:
    rep: int
    rows: dict = field(default_factory=dict)
    kappa: float = math.nan
    omega: float = math.nan
    mu: float = math.nan
    error: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    reps: int = 100
    S: int = 2000
    seed: int = 0
    grid_lower: float = 0.15
    grid_upper: float = 0.85
    kappa: float | None = None
    omega: float | None = None
    mu: float | None = None
    scad_a: float = 3.7
    iterate: bool = False
    max_outer_iter: int = 10
    tuning: TuningConfig = field(default_factory=TuningConfig)
    ci: CIConfig = field(default_factory=CIConfig)
    n_jobs: int = 1


PRESETS = {
    "desk": dict(n=200, p=50, reps=100, S=2000),
    "paper": dict(n=200, p=250, reps=1000, S=10000),
}


def _coef_metrics(coef: CoefVector | None, truth: CoefVector, stepwise_na=False):
    if coef is None or stepwise_na:
        nan = math.nan
        return dict(n_selected=nan, mse=nan, mse_active=nan, mse_inactive=nan,
                    n_selected_delta=nan, mse_delta=nan, oracle_selected=nan)
    a, t = coef.alpha, truth.alpha
    err2 = (a - t) ** 2
    active = t != 0
    mse_active = float(np.sum(err2[active]))
    mse_inactive = float(np.sum(err2[~active]))
    p = truth.p
    return dict(
        n_selected=float(np.count_nonzero(a)),
        mse=mse_active + mse_inactive,
        mse_active=mse_active,
        mse_inactive=mse_inactive,
        n_selected_delta=float(np.count_nonzero(a[p:])),
        mse_delta=float(np.sum(err2[p:])),
        oracle_selected=float(np.array_equal(a != 0, active)),
    )


def oracle2_search(data: Dataset, grid: ThresholdGrid, support, options=None):
    """Restricted fits on the known support at every grid point; smallest-risk threshold wins."""
    best = None
    for tau in grid.points:
        coef = solve_restricted_qr(data, float(tau), support, options=options)
        risk = float(np.mean(check_loss(data.y - augmented_design(data, tau) @ coef.alpha, data.gamma)))
        if best is None or risk < best[0]:
            best = (risk, coef, float(tau))
    return best[1], best[2]


def _row(sample, model, truth, spec, coef_na=False, tau_est=None, ci=None, no_change=math.nan, oracle=False):
    m = _coef_metrics(model.coef, truth.coef, coef_na)
    if oracle:
        m["oracle_selected"] = math.nan
    declared = tau_est is not None and spec.has_change
    lo, hi = ci if ci is not None else (math.nan, math.nan)
    covered = math.nan
    if ci is not None and spec.has_change:
        covered = float(lo <= spec.tau0 <= hi)
    return RowMetrics(
        excess_risk=_excess_on(sample, model, truth, spec.gamma),
        pred_error=_pred_on(sample, model, truth),
        tau_hat=tau_est if tau_est is not None else math.nan,
        tau_error=(tau_est - spec.tau0) if declared else math.nan,
        ci_lo=lo, ci_hi=hi, ci_covered=covered,
        no_change=no_change,
        **m,
    )


def run_replication(spec: DGPSpec, cfg: ExperimentConfig, rep: int) -> ReplicationSummary:
    ss_data, ss_tune, ss_ci, ss_eval = np.random.SeedSequence([cfg.seed, rep]).spawn(4)
    data, truth = generate(spec, np.random.default_rng(ss_data))
    grid = ThresholdGrid.from_observations(data.q, cfg.grid_lower, cfg.grid_upper)
    tune_seed = int(ss_tune.generate_state(1)[0])
    ci_seed = int(ss_ci.generate_state(1)[0])
    fc = FitConfig(grid, kappa=cfg.kappa, omega=cfg.omega, mu=cfg.mu, scad_a=cfg.scad_a, iterate=cfg.iterate,
                   max_outer_iter=cfg.max_outer_iter, tuning=replace(cfg.tuning, seed=tune_seed))
    res = fit(data, fc)
    sample = _draw(spec, np.random.default_rng(ss_eval), cfg.S)
    support = truth.coef.active_set

    def ci_for(coef, tau_fit, centre, k):
        if not spec.has_change or centre is None or coef.delta_is_zero:
            return None
        rho1, rho2 = pools_from_fit(data, coef, tau_fit)
        if not (np.any(rho1 != 0) or np.any(rho2 != 0)):
            return None
        c = ci_from_pools(data.q, centre, rho1, rho2, replace(cfg.ci, seed=ci_seed + k))
        return c.lo, c.hi

    rows = {}
    o1 = solve_restricted_qr(data, spec.tau0, support)
    rows["oracle1"] = _row(sample, ThresholdedModel(o1, spec.tau0), truth, spec, oracle=True)
    o2, tau_o2 = oracle2_search(data, grid, support)
    rows["oracle2"] = _row(sample, ThresholdedModel(o2, tau_o2), truth, spec,
                           tau_est=tau_o2 if not o2.delta_is_zero else None,
                           ci=ci_for(o2, tau_o2, tau_o2, 1), oracle=True)

    s1c, s1t = res.step1.coef, res.step1.tau
    rows["step1"] = _row(sample, res.step1, truth, spec,
                         tau_est=None if s1c.delta_is_zero else s1t,
                         ci=ci_for(s1c, s1t, s1t, 2), no_change=float(s1c.delta_is_zero))
    tau2 = None if res.skipped_step2 else res.step2_tau
    rows["step2"] = _row(sample, ThresholdedModel(s1c, res.step2_tau), truth, spec, coef_na=True,
                         tau_est=tau2, ci=ci_for(s1c, s1t, tau2, 3))
    for name, coef, retau, k in (("step3a", res.step3a, res.tau_step3a, 4),
                                 ("step3b", res.step3b, res.tau_step3b, 5)):
        tau_use = retau if retau is not None else res.step3_tau
        rows[name] = _row(sample, ThresholdedModel(coef, tau_use), truth, spec,
                          tau_est=retau, ci=ci_for(coef, res.step3_tau, retau, k),
                          no_change=float(coef.delta_is_zero))
    return ReplicationSummary(rep, rows, res.kappa, res.omega, res.mu)


def _safe_replication(args):
    spec, cfg, rep = args
    try:
        return run_replication(spec, cfg, rep)
    except Exception as exc:  # recorded, never silently dropped
        log.warning("replication %d failed: %s", rep, exc)
        return ReplicationSummary(rep, error=f"{type(exc).__name__}: {exc}")


def summarize(reps: list) -> dict:
    """Column means per row; threshold RMSE and coverage only over replications where they exist."""
    ok = [r for r in reps if r.error is None]
    table = {}
    for name in ROWS:
        ms = [r.rows[name] for r in ok]
        if not ms:
            continue

        def col(attr):
            return np.array([getattr(m, attr) for m in ms], dtype=float)

        def mean(attr):
            v = col(attr)
            v = v[~np.isnan(v)]
            return float(np.mean(v)) if v.size else math.nan

        err = col("tau_error")
        err = err[~np.isnan(err)]
        cov = col("ci_covered")
        cov = cov[~np.isnan(cov)]
        table[name] = dict(
            excess_risk=mean("excess_risk"),
            excess_risk_se=float(np.std(col("excess_risk"), ddof=1) / math.sqrt(len(ms))) if len(ms) > 1 else math.nan,
            n_selected=mean("n_selected"),
            mse=mean("mse"), mse_active=mean("mse_active"), mse_inactive=mean("mse_inactive"),
            pred_error=mean("pred_error"),
            rmse_tau=float(np.sqrt(np.mean(err ** 2))) if err.size else math.nan,
            n_tau=int(err.size),
            coverage=float(np.mean(cov)) if cov.size else math.nan,
            n_ci=int(cov.size),
            oracle_prop=mean("oracle_selected"),
            no_change_prop=mean("no_change"),
            n_selected_delta=mean("n_selected_delta"),
            mse_delta=mean("mse_delta"),
        )
    return table


@dataclass
class ExperimentResult:
    spec: DGPSpec
    config: ExperimentConfig
    replications: list
    table: dict

    @property
    def failures(self) -> list:
        return [r for r in self.replications if r.error is not None]


def run_experiment(spec: DGPSpec, config: ExperimentConfig) -> ExperimentResult:
    """Replicate generate -> tune -> fit -> oracles -> CIs; replication r uses substream (seed, r)."""
    jobs = [(spec, config, r) for r in range(config.reps)]
    if config.n_jobs > 1:
        with ProcessPoolExecutor(config.n_jobs) as ex:
            reps = list(ex.map(_safe_replication, jobs))
    else:
        reps = [_safe_replication(j) for j in jobs]
    return ExperimentResult(spec, config, reps, summarize(reps))


def replication_rows(result: ExperimentResult) -> list:
    """Flat per-replication, per-row records for plotting."""
    out = []
    for r in result.replications:
        if r.error is not None:
            out.append(dict(rep=r.rep, row="", error=r.error))
            continue
        for name in ROWS:
            out.append(dict(rep=r.rep, row=name, kappa=r.kappa, omega=r.omega, mu=r.mu, **asdict(r.rows[name])))
    return out


def run_grid(spec: DGPSpec, config: ExperimentConfig, variations: list) -> list:
    """One experiment per dict of overrides; keys name DGPSpec or ExperimentConfig fields."""
    spec_fields = set(DGPSpec.__dataclass_fields__)
    cfg_fields = set(ExperimentConfig.__dataclass_fields__)
    out = []
    for v in variations:
        unknown = set(v) - spec_fields - cfg_fields
        if unknown:
            raise ValueError(f"unknown fields {sorted(unknown)}")
        s = replace(spec, **{k: val for k, val in v.items() if k in spec_fields})
        c = replace(config, **{k: val for k, val in v.items() if k in cfg_fields})
        out.append((v, run_experiment(s, c)))
    return out
