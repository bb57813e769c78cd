"""
A small Monte Carlo experiment
==============================

Compare the estimator with two oracles: one that knows both the active set
and the change point, and one that knows only the active set.  The desk
preset (100 replications) takes a few minutes; here we run 10.
"""

from cpqr.harness import DGPSpec, ExperimentConfig, run_experiment

spec = DGPSpec.baseline(n=200, p=50, gamma=0.5)
res = run_experiment(spec, ExperimentConfig(reps=10, S=2000, seed=0))
print("failed replications:", len(res.failures))

cols = ("excess_risk", "n_selected", "mse", "rmse_tau", "coverage", "oracle_prop")
print("%-8s" % "row" + "".join("%13s" % c for c in cols))
for row, stats in res.table.items():
    print("%-8s" % row + "".join("%13.4f" % stats[c] for c in cols))

# the same design without a change point
flat = run_experiment(DGPSpec.no_change(n=200, p=50), ExperimentConfig(reps=10, seed=0))
print("no-change proportion (Step 3b):", flat.table["step3b"]["no_change_prop"])
