# Four filters on the logistic benchmark
#
# Ten independent state dimensions share two unknown parameters.  SPF and
# DAPF filter everything in one cloud of 2000 particles; the MPF variants
# split the state into five blocks of two dimensions with 400 particles
# each.  mpf-fusion also pools what every block learned about the shared
# parameters at every step.
import numpy as np

from mpfusion import filters
from mpfusion.experiment import ExperimentConfig, score
from mpfusion.model import make_partitioning

config = ExperimentConfig(d_x=10, d_theta_g=2, T=50, K=5)
model = config.model()
traj = model.simulate(config.T, np.random.default_rng(3))
print("true parameters", model.theta_true, "| particles", config.budget())

for variant in filters.VARIANTS:
    K = config.K if variant.startswith("mpf") else 1
    state = filters.init(variant, model, make_partitioning(config.d_x, K), config.N_total, seed=17)
    est = filters.run_filter(state, traj.observations)
    ms, mp = score(traj, model.theta_true, [e.state_mean for e in est], [e.theta_mean for e in est])
    print(
        f"{variant:>10}: theta_hat(50) = {np.round(est[-1].theta_mean, 2)}"
        f"  state MSE t=5 {ms[4]:.2f} t=50 {ms[-1]:.2f}  param MSE t=5 {mp[4]:.2f} t=50 {mp[-1]:.2f}"
    )

# One realization is noisy.  The averaged curves come from
# run_experiment or `mpfusion run`.
