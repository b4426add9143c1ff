# Fusing posteriors that share a prior
#
# K agents each start from the same prior over a parameter and each see
# their own data.  Multiplying their posteriors counts the prior K times,
# so the fused density divides it back out K-1 times.
import numpy as np

from mpfusion.gaussian import Gaussian, fuse, fuse_with_info

# The scalar case that is easy to check by hand: two locals N(1,1) and
# N(3,1) built on a N(0,2) prior.  Precision 1 + 1 - 1/2 = 3/2.
prior = Gaussian([0.0], [[2.0]])
q = fuse([Gaussian([1.0], [[1.0]]), Gaussian([3.0], [[1.0]])], prior)
print("fused mean", q.mean, "expected", 8 / 3)
print("fused var ", q.cov.ravel(), "expected", 2 / 3)

# Fusion is exact for conjugate models.  Five sensors measure a 2-D mean
# with their own noise; the fused local posteriors equal the posterior
# given all five measurements.
rng = np.random.default_rng(0)
theta = np.array([0.5, -1.0])
m0, P0 = np.zeros(2), 4.0 * np.eye(2)
P0inv = np.linalg.inv(P0)
locals_, info, prec = [], P0inv @ m0, P0inv.copy()
for k in range(5):
    R = np.diag(rng.uniform(0.5, 2.0, 2))
    y = rng.multivariate_normal(theta, R)
    Pk = np.linalg.inv(P0inv + np.linalg.inv(R))
    locals_.append(Gaussian(Pk @ (P0inv @ m0 + np.linalg.solve(R, y)), Pk))
    info += np.linalg.solve(R, y)
    prec += np.linalg.inv(R)
full = np.linalg.solve(prec, info)
q = fuse(locals_, Gaussian(m0, P0))
print("fused mean    ", q.mean)
print("full-data mean", full)

# With noisy locals the formula can produce a negative precision, for
# instance when a local is broader than the prior it was built on.  The
# repair keeps the prior and only the directions where a local added
# information.
res = fuse_with_info([Gaussian([0.0], [[10.0]]), Gaussian([1.0], [[10.0]])], Gaussian([0.0], [[1.0]]))
print("fallback:", res.fallback, "-> mean", res.gaussian.mean, "var", res.gaussian.cov.ravel())
