# A 100-dimensional state with one unknown parameter
#
# 10000 particles sound like a lot, but a single cloud weighting against a
# 100-dimensional observation collapses onto a handful of particles every
# step.  Splitting into 50 blocks of two dimensions keeps each block's
# weighting problem small.  This takes about ten seconds.
import numpy as np

from mpfusion import filters
from mpfusion.experiment import ExperimentConfig, score
from mpfusion.model import make_partitioning
from mpfusion.particles import effective_sample_size, normalize

config = ExperimentConfig(d_x=100, d_theta_g=1, K=50, T=50)
model = config.model()
traj = model.simulate(config.T, np.random.default_rng(5))

# how degenerate is one global step?
state = filters.init("spf", model, None, config.N_total, seed=1)
z = state.clouds[0].samples
x1 = model.propagate(z[:, :100], None, z[:, 100:], np.random.default_rng(2), slice(0, 100))
lw = model.loglik(traj.observations[0], x1, None, z[:, 100:], slice(0, 100))
print("ESS of one 100-D update with 10000 particles:", round(effective_sample_size(normalize(lw)), 1))

for variant in filters.VARIANTS:
    K = config.K if variant.startswith("mpf") else 1
    state = filters.init(variant, model, make_partitioning(config.d_x, K), config.N_total, seed=1)
    est = filters.run_filter(state, traj.observations)
    ms, mp = score(traj, model.theta_true, [e.state_mean for e in est], [e.theta_mean for e in est])
    print(f"{variant:>10}: state MSE at t=50 {ms[-1]:.3f}  param MSE {mp[-1]:.3f}  failed {state.failed}")
