"""Separable state-space models.

The benchmark system is applied elementwise over ``d_x`` independent
dimensions that share a 5-vector of static parameters::

    x[i, t] = th1 / (1 + exp(-x[i, t-1] + th5)) + th2 + u[i, t]
    y[i, t] = th3 * x[i, t] + th4 + v[i, t]

Only the leading ``dim_global`` parameters are treated as unknown; the rest
are injected as constants.

Every model exposes the same particle-level interface used by the filters:
``sample_initial``, ``propagate``, ``loglik`` and ``simulate``.  A block of
the state is addressed by a slice ``sl`` and its subsystem index ``k``
(``k=None`` means the whole state vector).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)
THETA_TRUE = (2.0, -2.0, 2.0, -2.0, 3.0)


@dataclass(frozen=True)
class ParamLayout:
    """Global parameters followed by per-subsystem local parameters.

    Index order in the flat vector is ``[local_1, ..., local_K, global]``.
    """

    dim_global: int
    dims_local: tuple[int, ...] = ()

    def __post_init__(self):
        if self.dim_global < 0 or any(d < 0 for d in self.dims_local):
            raise ValueError("parameter dimensions must be non-negative")
        object.__setattr__(self, "dims_local", tuple(int(d) for d in self.dims_local))

    @property
    def total(self) -> int:
        return self.dim_global + sum(self.dims_local)

    def local_index(self, k: int) -> np.ndarray:
        start = sum(self.dims_local[:k])
        return np.arange(start, start + self.dims_local[k])

    def global_index(self) -> np.ndarray:
        start = sum(self.dims_local)
        return np.arange(start, start + self.dim_global)


@dataclass(frozen=True)
class Partitioning:
    """K contiguous, disjoint, ascending blocks covering the state and observations."""

    state_blocks: tuple[slice, ...]
    obs_blocks: tuple[slice, ...]

    def __post_init__(self):
        for blocks in (self.state_blocks, self.obs_blocks):
            pos = 0
            for b in blocks:
                if b.start != pos or b.stop <= b.start:
                    raise ValueError("blocks must be contiguous, non-empty and ascending")
                pos = b.stop
        if len(self.state_blocks) != len(self.obs_blocks):
            raise ValueError("state and observation partitions differ in length")

    @property
    def K(self) -> int:
        return len(self.state_blocks)

    @property
    def d_x(self) -> int:
        return self.state_blocks[-1].stop

    @property
    def d_y(self) -> int:
        return self.obs_blocks[-1].stop


def make_partitioning(d_x: int, K: int) -> Partitioning:
    """Split ``d_x`` dimensions into ``K`` equal contiguous blocks (obs blocks mirror state)."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got K={K}")
    if d_x % K:
        raise ValueError(f"d_x={d_x} is not divisible by K={K}")
    w = d_x // K
    blocks = tuple(slice(k * w, (k + 1) * w) for k in range(K))
    return Partitioning(blocks, blocks)


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray  # (T, d_x)
    observations: np.ndarray  # (T, d_y)

    @property
    def T(self) -> int:
        return self.states.shape[0]


def _check_len(name, arr, n):
    if arr.shape[-1] != n:
        raise ValueError(f"{name} has length {arr.shape[-1]}, expected {n}")


@dataclass(frozen=True)
class BenchmarkModel:
    """Logistic transition with affine observation, shared over all dimensions.

    Parameters
    ----------
    d_x : int
        State (and observation) dimension.
    dim_global : int
        Number of leading entries of ``theta_full`` that are unknown.
    theta_full : sequence of 5 floats
        True parameter values; entries past ``dim_global`` are known constants.
    sigma_u2, sigma_v2 : float
        Per-dimension state and observation noise variances.
    theta_prior_mean, theta_prior_var : float
        Isotropic Gaussian prior on the unknown parameters.
    """

    d_x: int
    dim_global: int = 2
    theta_full: tuple[float, ...] = THETA_TRUE
    sigma_u2: float = 2.0
    sigma_v2: float = 1.0
    theta_prior_mean: float = 1.0
    theta_prior_var: float = 2.0
    dim_local: int = field(default=0, init=False)

    def __post_init__(self):
        object.__setattr__(self, "theta_full", tuple(float(v) for v in self.theta_full))
        if len(self.theta_full) != 5:
            raise ValueError("theta_full must have 5 entries")
        if not 0 <= self.dim_global <= 5:
            raise ValueError(f"dim_global must be in 0..5, got {self.dim_global}")
        if self.sigma_u2 <= 0 or self.sigma_v2 <= 0:
            raise ValueError("noise variances must be positive")
        if self.d_x < 1:
            raise ValueError("d_x must be >= 1")

    @property
    def d_y(self) -> int:
        return self.d_x

    @property
    def theta_true(self) -> np.ndarray:
        """True values of the unknown (estimated) parameters."""
        return np.array(self.theta_full[: self.dim_global])

    def full_theta(self, theta_global: np.ndarray) -> np.ndarray:
        """Pad unknown parameters (..., dim_global) with the known constants to (..., 5)."""
        theta_global = np.asarray(theta_global, dtype=float)
        _check_len("theta_global", theta_global, self.dim_global)
        known = np.broadcast_to(
            np.array(self.theta_full[self.dim_global :]),
            theta_global.shape[:-1] + (5 - self.dim_global,),
        )
        return np.concatenate([theta_global, known], axis=-1)

    # elementwise maps on full 5-vectors; theta may be (5,) or (N, 5)

    def transition(self, x_prev, theta, noise):
        x_prev, theta, noise = (np.asarray(a, dtype=float) for a in (x_prev, theta, noise))
        _check_len("theta", theta, 5)
        if x_prev.shape != noise.shape:
            raise ValueError(f"x_prev shape {x_prev.shape} != noise shape {noise.shape}")
        th = theta[..., None, :] if theta.ndim > 1 else theta
        return th[..., 0] / (1.0 + np.exp(-x_prev + th[..., 4])) + th[..., 1] + noise

    def observe(self, x, theta, noise):
        x, theta, noise = (np.asarray(a, dtype=float) for a in (x, theta, noise))
        _check_len("theta", theta, 5)
        if x.shape != noise.shape:
            raise ValueError(f"x shape {x.shape} != noise shape {noise.shape}")
        th = theta[..., None, :] if theta.ndim > 1 else theta
        return th[..., 2] * x + th[..., 3] + noise

    def log_likelihood(self, y_block, x_block, theta):
        """Sum of per-dimension Gaussian log-densities of ``y_block`` given ``x_block``.

        ``x_block`` may carry a leading particle axis, in which case one value
        per particle is returned.
        """
        y_block = np.asarray(y_block, dtype=float)
        x_block = np.asarray(x_block, dtype=float)
        theta = np.asarray(theta, dtype=float)
        _check_len("x_block", x_block, y_block.shape[-1])
        if y_block.shape[-1] < 1:
            raise ValueError("empty observation block")
        th = theta[..., None, :] if theta.ndim > 1 else theta
        resid = y_block - (th[..., 2] * x_block + th[..., 3])
        return -0.5 * np.sum(resid**2, axis=-1) / self.sigma_v2 - 0.5 * y_block.shape[-1] * (
            LOG_2PI + np.log(self.sigma_v2)
        )

    # particle-level interface

    def global_prior(self):
        m = np.full(self.dim_global, self.theta_prior_mean)
        return m, self.theta_prior_var * np.eye(self.dim_global)

    def local_prior(self, k):
        return np.zeros(0), np.zeros((0, 0))

    def sample_initial(self, n, rng, sl):
        width = sl.stop - sl.start
        return np.sqrt(self.sigma_u2) * rng.standard_normal((n, width))

    def propagate(self, x, theta_local, theta_global, rng, sl, k=None):
        noise = np.sqrt(self.sigma_u2) * rng.standard_normal(x.shape)
        return self.transition(x, self.full_theta(theta_global), noise)

    def loglik(self, y, x, theta_local, theta_global, sl, k=None):
        return self.log_likelihood(y, x, self.full_theta(theta_global))

    def simulate(self, T, rng, x0=None):
        return simulate_trajectory(self, T, rng, x0=x0)


def simulate_trajectory(model: BenchmarkModel, T: int, rng: np.random.Generator, x0=None) -> Trajectory:
    """Draw a ground-truth trajectory of length ``T``.

    ``x0`` defaults to a draw from N(0, sigma_u2 I), the same law the filters
    use for their initial particles.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got T={T}")
    theta = np.array(model.theta_full)
    if x0 is None:
        x = np.sqrt(model.sigma_u2) * rng.standard_normal(model.d_x)
    else:
        x = np.asarray(x0, dtype=float).copy()
        _check_len("x0", x, model.d_x)
    states = np.empty((T, model.d_x))
    obs = np.empty((T, model.d_x))
    su, sv = np.sqrt(model.sigma_u2), np.sqrt(model.sigma_v2)
    for t in range(T):
        x = model.transition(x, theta, su * rng.standard_normal(model.d_x))
        states[t] = x
        obs[t] = model.observe(x, theta, sv * rng.standard_normal(model.d_x))
    return Trajectory(states, obs)
