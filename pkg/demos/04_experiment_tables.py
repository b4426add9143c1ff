# Averaged MSE curves, as the command line produces them
#
# Realizations are paired: every algorithm sees the same trajectory for a
# given realization index.  This is a quick 5-realization version; the
# full study is `mpfusion run --out results/` with the defaults.
import numpy as np

from mpfusion.experiment import ExperimentConfig, run_experiment

table = run_experiment(ExperimentConfig(realizations=5, master_seed=1))
print(table.metadata)
for alg in ("spf", "dapf", "mpf", "mpf-fusion"):
    p = table.curve(alg, "avg_mse_param")
    s = table.curve(alg, "avg_mse_state")
    print(f"{alg:>10}: param MSE t=1,5,20,50 {np.round(p[[0, 4, 19, 49]], 2)}  state MSE t=50 {s[-1]:.2f}")
print("failed realizations:", table.failures())
