"""Linear-Gaussian test model and its exact Kalman recursion.

The model is::

    x_t = A x_{t-1} + w_t,                 w_t ~ N(0, Q)
    y_t = C x_t + D theta_g + E theta_l + v_t,   v_t ~ N(0, R)

with static Gaussian-distributed ``theta_g`` (shared) and ``theta_l`` (one
offset per subsystem, optional).  Because the static parameters enter
linearly, a Kalman filter on the augmented state ``[x, theta_l, theta_g]``
gives the exact joint posterior, which the particle filters are checked
against.

Blocks of ``A``, ``C``, ``Q`` and ``R`` outside the diagonal blocks of the
partition passed to the filters are ignored by the per-block methods, so a
model meant for MPF runs should be block diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Partitioning, Trajectory


def _psd_sqrt(m):
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


class LinearGaussianModel:
    def __init__(
        self,
        A,
        C,
        Q,
        R,
        m0=None,
        P0=None,
        D=None,
        theta_global_true=(),
        global_prior_mean=None,
        global_prior_cov=None,
        local_partitioning: Partitioning | None = None,
        theta_local_true=None,
        local_prior_var=1.0,
    ):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.C = np.atleast_2d(np.asarray(C, dtype=float))
        self.Q = np.atleast_2d(np.asarray(Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(R, dtype=float))
        d = self.A.shape[0]
        if self.A.shape != (d, d) or self.Q.shape != (d, d):
            raise ValueError("A and Q must be d_x by d_x")
        if self.C.shape != (d, d) or self.R.shape != (d, d):
            raise ValueError("C and R must be d_x by d_x (one observation per state dimension)")
        self.d_x = d
        self.m0 = np.zeros(d) if m0 is None else np.asarray(m0, dtype=float)
        self.P0 = np.eye(d) if P0 is None else np.atleast_2d(np.asarray(P0, dtype=float))

        self.theta_global_true = np.atleast_1d(np.asarray(theta_global_true, dtype=float))
        g = self.theta_global_true.size
        self.dim_global = g
        self.D = np.zeros((d, g)) if D is None else np.asarray(D, dtype=float).reshape(d, g)
        self.gp_mean = np.zeros(g) if global_prior_mean is None else np.asarray(global_prior_mean, dtype=float)
        self.gp_cov = np.eye(g) if global_prior_cov is None else np.atleast_2d(np.asarray(global_prior_cov, dtype=float))

        self.local_partitioning = local_partitioning
        if local_partitioning is None:
            self.dim_local = 0
            self.theta_local_true = np.zeros(0)
        else:
            self.dim_local = 1
            self.theta_local_true = np.asarray(theta_local_true, dtype=float)
            if self.theta_local_true.shape != (local_partitioning.K,):
                raise ValueError("need one true local offset per block")
        self.local_prior_var = float(local_prior_var)

        self._q_sqrt = _psd_sqrt(self.Q)

    @property
    def d_y(self):
        return self.d_x

    @property
    def theta_true(self):
        return self.theta_global_true

    @property
    def E(self):
        """Observation loading of the stacked local offsets, d_y x K."""
        if self.local_partitioning is None:
            return np.zeros((self.d_x, 0))
        E = np.zeros((self.d_x, self.local_partitioning.K))
        for k, sl in enumerate(self.local_partitioning.obs_blocks):
            E[sl, k] = 1.0
        return E

    # particle-level interface

    def global_prior(self):
        return self.gp_mean, self.gp_cov

    def local_prior(self, k):
        return np.zeros(self.dim_local), self.local_prior_var * np.eye(self.dim_local)

    def sample_initial(self, n, rng, sl):
        m, P = self.m0[sl], self.P0[sl, sl]
        return m + rng.standard_normal((n, m.size)) @ _psd_sqrt(P).T

    def propagate(self, x, theta_local, theta_global, rng, sl, k=None):
        eps = rng.standard_normal(x.shape)
        return x @ self.A[sl, sl].T + eps @ self._q_sqrt[sl, sl].T

    def _local_offset(self, theta_local, sl, k):
        if self.dim_local == 0:
            return 0.0
        if k is None:
            raise ValueError("local offsets require a per-block filter")
        return theta_local[:, :1]

    def loglik(self, y, x, theta_local, theta_global, sl, k=None):
        mu = x @ self.C[sl, sl].T + theta_global @ self.D[sl].T + self._local_offset(theta_local, sl, k)
        R = self.R[sl, sl]
        L = np.linalg.cholesky(R)
        r = np.linalg.solve(L, (y - mu).T)
        return -0.5 * np.sum(r**2, axis=0) - np.sum(np.log(np.diag(L))) - 0.5 * y.size * np.log(2 * np.pi)

    def simulate(self, T, rng, x0=None):
        if T < 1:
            raise ValueError(f"T must be >= 1, got T={T}")
        d = self.d_x
        x = self.m0 + _psd_sqrt(self.P0) @ rng.standard_normal(d) if x0 is None else np.asarray(x0, float)
        offset = self.D @ self.theta_global_true + self.E @ self.theta_local_true
        r_sqrt = _psd_sqrt(self.R)
        states, obs = np.empty((T, d)), np.empty((T, d))
        for t in range(T):
            x = self.A @ x + self._q_sqrt @ rng.standard_normal(d)
            states[t] = x
            obs[t] = self.C @ x + offset + r_sqrt @ rng.standard_normal(d)
        return Trajectory(states, obs)

    def kalman(self, observations):
        """Exact filter over ``[x, theta_l, theta_g]``; see :func:`kalman_filter`."""
        E = self.E
        nl = E.shape[1]
        g = self.dim_global
        d = self.d_x
        n = d + nl + g
        F = np.eye(n)
        F[:d, :d] = self.A
        Qz = np.zeros((n, n))
        Qz[:d, :d] = self.Q
        H = np.hstack([self.C, E, self.D])
        m = np.concatenate([self.m0, np.zeros(nl), self.gp_mean])
        P = np.zeros((n, n))
        P[:d, :d] = self.P0
        P[d : d + nl, d : d + nl] = self.local_prior_var * np.eye(nl)
        P[d + nl :, d + nl :] = self.gp_cov
        return kalman_filter(observations, F, Qz, H, self.R, m, P)


def kalman_filter(observations, F, Q, H, R, m0, P0):
    """Predict-then-update Kalman recursion, one update per row of ``observations``.

    Returns filtered means (T, n) and covariances (T, n, n).
    """
    ys = np.atleast_2d(observations)
    m, P = np.asarray(m0, float), np.asarray(P0, float)
    means, covs = [], []
    for y in ys:
        m = F @ m
        P = F @ P @ F.T + Q
        S = H @ P @ H.T + R
        K = np.linalg.solve(S.T, (P @ H.T).T).T
        m = m + K @ (y - H @ m)
        # Joseph form keeps P symmetric PSD when R is tiny
        I_KH = np.eye(len(m)) - K @ H
        P = I_KH @ P @ I_KH.T + K @ R @ K.T
        means.append(m)
        covs.append(P)
    return np.array(means), np.array(covs)


def make_linear_gaussian_oracle(d_x, A, C, Q, R, **kwargs):
    """Build a :class:`LinearGaussianModel` and return it with its exact filter.

    The second element maps an observation array to Kalman means and covariances.
    """
    model = LinearGaussianModel(A, C, Q, R, **kwargs)
    if model.d_x != d_x:
        raise ValueError(f"matrices describe d_x={model.d_x}, expected {d_x}")
    return model, model.kalman
