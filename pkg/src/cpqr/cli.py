"""Command-line front end: ``cpqr fit|tune|ci|simulate``.

Reports are plain text: ``key = value`` lines plus embedded CSV tables
delimited by ``[table name]`` and ``[end]``.  Floats are written with 17
significant digits so they read back exactly.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from dataclasses import fields, replace

import numpy as np

from .core import CoefVector, Dataset, ThresholdGrid
from .estimator import FitConfig, fit
from .harness import PRESETS, ROWS, DGPSpec, ExperimentConfig, RowMetrics, run_experiment
from .inference import CIConfig, ci_from_pools, confidence_interval, pools_from_fit
from .tuning import TuningConfig, select_kappa, select_mu, select_omega

EXIT_OK, EXIT_USAGE, EXIT_SOLVER = 0, 2, 3


class UsageError(Exception):
    """Bad flags, configuration or input data (exit code 2)."""


# key, flag, type, default, commands, help
SETTINGS = [
    ("data.gamma", "--gamma", float, 0.5, "fit tune ci simulate", "quantile level"),
    ("grid.lower", "--grid-lower", float, 0.15, "fit tune ci simulate",
     "lower end of the threshold grid as a quantile of q (15th percentile)"),
    ("grid.upper", "--grid-upper", float, 0.85, "fit tune ci simulate",
     "upper end of the threshold grid as a quantile of q (85th percentile)"),
    ("grid.mode", "--grid-mode", str, "obs", "fit tune ci",
     "obs: every distinct q between the bounds; equispaced: --grid-points evenly spaced values"),
    ("grid.points", "--grid-points", int, 100, "fit tune ci", "grid size in equispaced mode"),
    ("tuning.c1", "--c1", float, 1.1, "fit tune ci simulate", "multiplier on the simulated score quantile, c1 = 1.1"),
    ("tuning.c2", "--c2", float, None, "fit tune ci simulate", "mu = c2 * omega; unset means c2 = ln(ln n)"),
    ("tuning.eps_star", "--eps-star", float, 0.1, "fit tune ci simulate", "tail probability of the score quantile, eps* = 0.1"),
    ("tuning.n_sims", "--n-sims", int, 1000, "fit tune ci simulate", "simulated score draws"),
    ("fit.kappa", "--kappa", float, None, "fit ci simulate", "Step 1 penalty level; unset means tuned by simulation"),
    ("fit.omega", "--omega", float, None, "fit ci simulate", "Step 3a penalty level; unset means tuned by simulation"),
    ("fit.mu", "--mu", float, None, "fit ci simulate", "Step 3b penalty level; unset means c2 * omega"),
    ("fit.scad_a", "--scad-a", float, 3.7, "fit ci simulate", "SCAD shape parameter a = 3.7"),
    ("fit.iterate", "--iterate", bool, False, "fit ci simulate", "repeat Step 2 and Step 3 until the threshold settles"),
    ("fit.max_outer_iter", "--max-outer-iter", int, 10, "fit ci simulate", "cap on outer iterations"),
    ("ci.level", "--level", float, 0.95, "fit ci simulate", "confidence level"),
    ("ci.B", "--boot", int, 1000, "fit ci simulate", "simulated compound Poisson paths, B = 1000"),
    ("ci.h_bar", "--hbar", float, 0.5, "fit ci simulate", "path horizon H = 0.5 (scaled by n)"),
    ("ci.source", "--ci-source", str, "step1", "fit ci",
     "coefficients behind the jump pools: step1, step3a or step3b"),
    ("seed", "--seed", int, 0, "fit tune ci simulate", "master seed"),
    ("tune.tau", "--tau", float, None, "tune", "threshold at which omega and mu are reported"),
    ("sim.preset", "--preset", str, "desk", "simulate",
     "desk: n=200, p=50, reps=100, S=2000; paper: n=200, p=250, reps=1000, S=10000"),
    ("sim.design", "--design", str, "baseline", "simulate",
     "baseline (jump of 1 in the second regressor) or no_change (delta = 0)"),
    ("dgp.n", "--n", int, None, "simulate", "sample size (preset)"),
    ("dgp.p", "--p", int, None, "simulate", "covariates including the intercept (preset)"),
    ("sim.reps", "--reps", int, None, "simulate", "replications (preset)"),
    ("sim.S", "--eval-size", int, None, "simulate", "fresh draws for excess risk and prediction error (preset)"),
    ("dgp.tau0", "--tau0", float, 0.5, "simulate", "true change point"),
    ("dgp.q_dist", "--q-dist", str, "uniform01", "simulate", "uniform01, standard_normal or chi_squared_1"),
    ("dgp.error_dist", "--error-dist", str, "normal", "simulate", "normal or cauchy"),
    ("dgp.error_scale", "--error-scale", float, 0.5, "simulate", "sd (normal) or scale (cauchy) of U, 0.5"),
    ("dgp.corr_rho", "--corr-rho", float, 0.5, "simulate", "AR(1) correlation of the covariates, 0.5"),
    ("sim.jobs", "--jobs", int, 1, "simulate", "worker processes for replications"),
]
KEYS = {s[0]: s for s in SETTINGS}
CHOICES = {
    "grid.mode": ("obs", "equispaced"),
    "ci.source": ("step1", "step3a", "step3b"),
    "sim.preset": tuple(PRESETS),
    "sim.design": ("baseline", "no_change"),
    "dgp.q_dist": ("uniform01", "standard_normal", "chi_squared_1"),
    "dgp.error_dist": ("normal", "cauchy"),
}


def _dest(key):
    return key.replace(".", "__")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cpqr",
        description="l1-penalized quantile regression with an unknown change point.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "fit": "fit the three-step estimator to a CSV file and report the change point interval",
        "tune": "report the simulated penalty levels for a CSV file",
        "ci": "confidence interval for the change point (fits first unless --report is given)",
        "simulate": "Monte Carlo experiment on a simulated design",
    }
    for cmd, text in helps.items():
        p = sub.add_parser(cmd, help=text, description=text)
        if cmd != "simulate":
            p.add_argument("csv", help="CSV with a header; columns y and q are required, the rest are covariates")
        if cmd == "ci":
            p.add_argument("--report", help="reuse the coefficients of an earlier fit report", default=None)
        if cmd == "fit":
            p.add_argument("--no-ci", action="store_true", help="skip the confidence interval")
        p.add_argument("--config", help="JSON object of dotted keys, e.g. {\"tuning.c1\": 1.2}", default=None)
        p.add_argument("--out", help="report path; standard output when omitted", default=None)
        for key, flag, typ, default, cmds, text in SETTINGS:
            if cmd not in cmds.split():
                continue
            shown = "ln(ln n)" if key == "tuning.c2" else default
            h = f"{text} [{key}] (default: {shown})"
            if typ is bool:
                p.add_argument(flag, dest=_dest(key), action="store_true", default=None, help=h)
            else:
                p.add_argument(flag, dest=_dest(key), type=typ, default=None, choices=CHOICES.get(key),
                               metavar=None if key in CHOICES else key.rsplit(".", 1)[-1].upper(), help=h)
    return parser


def _coerce(key, value):
    typ = KEYS[key][2]
    if value is None:
        return None
    if typ is bool:
        if not isinstance(value, bool):
            raise UsageError(f"config key {key} must be true or false")
        return value
    if typ is int and (isinstance(value, bool) or not float(value).is_integer()):
        raise UsageError(f"config key {key} must be an integer")
    try:
        out = typ(value)
    except (TypeError, ValueError):
        raise UsageError(f"config key {key}: cannot read {value!r} as {typ.__name__}") from None
    if key in CHOICES and out not in CHOICES[key]:
        raise UsageError(f"config key {key} must be one of {', '.join(CHOICES[key])}")
    return out


def resolve_settings(args) -> dict:
    """Defaults, then preset, then config file, then flags."""
    cmd = args.command
    vals = {k: s[3] for k, s in KEYS.items() if cmd in s[4].split()}
    cfg = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
        unknown = sorted(k for k in cfg if k not in vals)
        if unknown:
            raise UsageError(f"unknown config keys for '{cmd}': {', '.join(unknown)}")
    flags = {k: getattr(args, _dest(k)) for k in vals if getattr(args, _dest(k), None) is not None}
    if cmd == "simulate":
        preset = flags.get("sim.preset", cfg.get("sim.preset", vals["sim.preset"]))
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}")
        pr = PRESETS[preset]
        vals.update({"dgp.n": pr["n"], "dgp.p": pr["p"], "sim.reps": pr["reps"], "sim.S": pr["S"]})
    for k, v in cfg.items():
        vals[k] = _coerce(k, v)
    vals.update(flags)
    return vals


def read_csv(path: str, gamma: float) -> tuple[Dataset, list]:
    """Load y, q and covariates; the covariate names are returned in file order."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise UsageError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    for need in ("y", "q"):
        if need not in header:
            raise UsageError(f"{path}: header lacks required column '{need}'")
    if len(set(header)) != len(header):
        raise UsageError(f"{path}: duplicate column names in header")
    covs = [h for h in header if h not in ("y", "q")]
    if not covs:
        raise UsageError(f"{path}: no covariate columns")
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    table = np.empty((len(body), len(header)))
    for i, r in enumerate(body):
        line = i + 2
        if len(r) != len(header):
            raise UsageError(f"{path}: row {line} has {len(r)} fields, header has {len(header)}")
        for j, cell in enumerate(r):
            try:
                v = float(cell)
            except ValueError:
                raise UsageError(f"{path}: row {line}, column '{header[j]}': not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise UsageError(f"{path}: row {line}, column '{header[j]}': non-finite value {cell!r}")
            table[i, j] = v
    col = {h: table[:, j] for j, h in enumerate(header)}
    try:
        data = Dataset(col["y"], np.column_stack([col[c] for c in covs]), col["q"], gamma)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    return data, covs


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "NA"
        return format(v, ".17g")
    return str(v)


class Report:
    def __init__(self, command: str):
        self.buf = io.StringIO()
        self.buf.write(f"# cpqr report\ncommand = {command}\n")

    def kv(self, key, value):
        self.buf.write(f"{key} = {_fmt(value)}\n")

    def table(self, name, header, rows):
        self.buf.write(f"[table {name}]\n")
        w = csv.writer(self.buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        self.buf.write("[end]\n")

    def text(self) -> str:
        return self.buf.getvalue()


def read_report(path: str) -> tuple[dict, dict]:
    kv, tables, current = {}, {}, None
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read report {path}: {exc}") from None
    for line in lines:
        if current is not None:
            if line == "[end]":
                current = None
            else:
                tables[name].append(next(csv.reader([line])))
        elif line.startswith("[table "):
            name = line[7:-1]
            tables[name] = []
            current = name
        elif " = " in line and not line.startswith("#"):
            k, v = line.split(" = ", 1)
            kv[k] = v
    return kv, tables


def _grid(data: Dataset, s: dict) -> ThresholdGrid:
    lo, hi = s["grid.lower"], s["grid.upper"]
    if not 0 <= lo < hi <= 1:
        raise UsageError("need 0 <= grid lower < grid upper <= 1")
    if s["grid.mode"] == "obs":
        return ThresholdGrid.from_observations(data.q, lo, hi)
    if s["grid.points"] < 1:
        raise UsageError("--grid-points must be positive")
    a, b = np.quantile(data.q, [lo, hi])
    return ThresholdGrid.equispaced(a, b, s["grid.points"], data.q)


def _seeds(seed: int) -> tuple[int, int]:
    a, b = np.random.SeedSequence(seed).generate_state(2)
    return int(a), int(b)


def _tuning(s, seed) -> TuningConfig:
    return TuningConfig(s["tuning.c1"], s["tuning.c2"], s["tuning.eps_star"], s["tuning.n_sims"], seed)


def _ci_config(s, seed) -> CIConfig:
    return CIConfig(s["ci.level"], s["ci.B"], s["ci.h_bar"], seed, None, s.get("ci.source", "step1"))


def _fit_config(s, grid, tune_seed) -> FitConfig:
    return FitConfig(grid, s["fit.kappa"], s["fit.omega"], s["fit.mu"], s["fit.scad_a"], s["fit.iterate"],
                     s["fit.max_outer_iter"], _tuning(s, tune_seed))


def _echo_settings(rep: Report, s: dict):
    for k in sorted(s):
        rep.kv(f"setting.{k}", s[k])


def _names(covs):
    return [f"beta:{c}" for c in covs] + [f"delta:{c}" for c in covs]


def _active(coef: CoefVector, names) -> str:
    return ";".join(names[j] for j in coef.active_set)


def _write_ci(rep: Report, ci):
    rep.kv("ci.lo", ci.lo)
    rep.kv("ci.hi", ci.hi)
    rep.kv("ci.centre", ci.tau_hat)
    rep.kv("ci.rate", ci.rate)
    rep.kv("ci.saturated_draws", ci.saturated)


def cmd_fit(args, s) -> str:
    data, covs = read_csv(args.csv, s["data.gamma"])
    tune_seed, ci_seed = _seeds(s["seed"])
    grid = _grid(data, s)
    res = fit(data, _fit_config(s, grid, tune_seed))
    names = _names(covs)
    rep = Report("fit")
    rep.kv("data", args.csv)
    rep.kv("n", data.n)
    rep.kv("p", data.p)
    _echo_settings(rep, s)
    rep.kv("grid.size", len(grid))
    rep.kv("kappa", res.kappa)
    rep.kv("omega", res.omega)
    rep.kv("mu", res.mu)
    rep.kv("step1.tau", res.step1.tau)
    rep.kv("step2.tau", res.step2_tau)
    rep.kv("step2.skipped", res.skipped_step2)
    rep.kv("step3.tau", res.step3_tau)
    rep.kv("step3a.tau_reestimated", res.tau_step3a)
    rep.kv("step3b.tau_reestimated", res.tau_step3b)
    rep.kv("tau_hat", res.final_tau)
    rep.kv("no_change_point", res.no_change_point)
    rep.kv("outer_iterations", res.outer_iterations)
    rep.kv("step1.active", _active(res.step1.coef, names))
    rep.kv("step3a.active", _active(res.step3a, names))
    rep.kv("step3b.active", _active(res.step3b, names))
    rep.kv("kkt.step1_max", res.reports["step1_kkt_max"])
    rep.kv("kkt.step3a", res.reports["step3a"].kkt_residual)
    rep.kv("kkt.step3b", res.reports["step3b"].kkt_residual)
    if not args.no_ci:
        try:
            ci = confidence_interval(data, res, _ci_config(s, ci_seed))
        except ValueError as exc:
            warnings.warn(f"confidence interval omitted: {exc}", RuntimeWarning, stacklevel=1)
            rep.kv("ci", "omitted")
        else:
            _write_ci(rep, ci)
    rows = [(nm, a, b, c, w) for nm, a, b, c, w in
            zip(names, res.step1.coef.alpha, res.step3a.alpha, res.step3b.alpha, res.scad_weights)]
    rep.table("coefficients", ["name", "step1", "step3a", "step3b", "scad_weight"], rows)
    rep.table("grid_trace", ["tau", "objective"], zip(grid.points, res.grid_trace))
    return rep.text()


def cmd_tune(args, s) -> str:
    data, _ = read_csv(args.csv, s["data.gamma"])
    tune_seed, _ = _seeds(s["seed"])
    grid = _grid(data, s)
    cfg = _tuning(s, tune_seed)
    rep = Report("tune")
    rep.kv("data", args.csv)
    rep.kv("n", data.n)
    rep.kv("p", data.p)
    _echo_settings(rep, s)
    rep.kv("grid.size", len(grid))
    rep.kv("c2", cfg.c2_for(data.n))
    rep.kv("kappa", select_kappa(data, grid, cfg))
    if s["tune.tau"] is not None:
        omega = select_omega(data, s["tune.tau"], cfg)
        rep.kv("omega", omega)
        rep.kv("mu", select_mu(omega, data.n, cfg))
    return rep.text()


def _coef_from_report(tables, column, covs) -> CoefVector:
    rows = tables.get("coefficients")
    if not rows:
        raise UsageError("report has no coefficients table")
    head = rows[0]
    if column not in head:
        raise UsageError(f"report coefficients lack column {column}")
    if [r[0] for r in rows[1:]] != _names(covs):
        raise UsageError("report coefficients do not match the CSV covariates")
    j = head.index(column)
    return CoefVector.from_alpha(np.array([float(r[j]) for r in rows[1:]]))


def cmd_ci(args, s) -> str:
    data, covs = read_csv(args.csv, s["data.gamma"])
    _, ci_seed = _seeds(s["seed"])
    cfg = _ci_config(s, ci_seed)
    rep = Report("ci")
    rep.kv("data", args.csv)
    _echo_settings(rep, s)
    if args.report:
        kv, tables = read_report(args.report)
        src = s["ci.source"]
        coef = _coef_from_report(tables, src, covs)
        try:
            if src == "step1":
                tau_fit, centre = float(kv["step1.tau"]), float(kv["step2.tau"])
            else:
                tau_fit = float(kv["step3.tau"])
                centre = float(kv[f"{src}.tau_reestimated"]) if kv[f"{src}.tau_reestimated"] != "NA" else None
        except (KeyError, ValueError) as exc:
            raise UsageError(f"report {args.report} is missing {exc}") from None
        if coef.delta_is_zero or centre is None:
            raise UsageError("CI undefined when the estimated delta is zero (no change point)")
        rep.kv("report", args.report)
        ci = ci_from_pools(data.q, centre, *pools_from_fit(data, coef, tau_fit), cfg)
    else:
        tune_seed, _ = _seeds(s["seed"])
        res = fit(data, _fit_config(s, _grid(data, s), tune_seed))
        try:
            ci = confidence_interval(data, res, cfg)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    _write_ci(rep, ci)
    return rep.text()


def cmd_simulate(args, s) -> str:
    kw = dict(q_dist=s["dgp.q_dist"], error_dist=s["dgp.error_dist"], error_scale=s["dgp.error_scale"],
              corr_rho=s["dgp.corr_rho"])
    make = DGPSpec.baseline if s["sim.design"] == "baseline" else DGPSpec.no_change
    try:
        spec = replace(make(s["dgp.n"], s["dgp.p"], gamma=s["data.gamma"], **kw), tau0=s["dgp.tau0"])
        cfg = ExperimentConfig(
            reps=s["sim.reps"], S=s["sim.S"], seed=s["seed"], grid_lower=s["grid.lower"], grid_upper=s["grid.upper"],
            kappa=s["fit.kappa"], omega=s["fit.omega"], mu=s["fit.mu"], scad_a=s["fit.scad_a"],
            iterate=s["fit.iterate"], max_outer_iter=s["fit.max_outer_iter"], tuning=_tuning(s, 0), ci=_ci_config(s, 0), n_jobs=s["sim.jobs"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    res = run_experiment(spec, cfg)
    rep = Report("simulate")
    _echo_settings(rep, s)
    rep.kv("replications", cfg.reps)
    rep.kv("failures", len(res.failures))
    for r in res.failures:
        rep.kv(f"failure.{r.rep}", r.error)
    cols = ["excess_risk", "excess_risk_se", "n_selected", "mse", "mse_active", "mse_inactive", "pred_error",
            "rmse_tau", "n_tau", "coverage", "n_ci", "oracle_prop", "no_change_prop", "n_selected_delta",
            "mse_delta"]
    rep.table("summary", ["row"] + cols, [[name] + [res.table[name][c] for c in cols]
                                          for name in ROWS if name in res.table])
    metric_cols = [f.name for f in fields(RowMetrics)]
    rows = []
    for r in res.replications:
        if r.error is None:
            for name in ROWS:
                m = r.rows[name]
                rows.append([r.rep, name, r.kappa, r.omega, r.mu] + [getattr(m, c) for c in metric_cols])
    rep.table("replications", ["rep", "row", "kappa", "omega", "mu"] + metric_cols, rows)
    return rep.text()


COMMANDS = {"fit": cmd_fit, "tune": cmd_tune, "ci": cmd_ci, "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = resolve_settings(args)
        text = COMMANDS[args.command](args, settings)
    except UsageError as exc:
        print(f"cpqr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"cpqr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RuntimeError as exc:
        print(f"cpqr: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
