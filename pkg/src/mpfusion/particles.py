"""Weighted particle arithmetic: log-space normalization, moments, ESS and resampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateWeights(FloatingPointError):
    """Raised when every log-weight is -inf (the filter has lost track)."""


@dataclass(frozen=True)
class CloudLayout:
    """Column ranges of a particle row ``[substate | local params | global params]``."""

    dim_state: int
    dim_local: int
    dim_global: int

    @property
    def dim(self) -> int:
        return self.dim_state + self.dim_local + self.dim_global

    @property
    def state(self) -> slice:
        return slice(0, self.dim_state)

    @property
    def local(self) -> slice:
        return slice(self.dim_state, self.dim_state + self.dim_local)

    @property
    def glob(self) -> slice:
        return slice(self.dim_state + self.dim_local, self.dim)

    @property
    def state_local_index(self) -> np.ndarray:
        return np.arange(self.dim_state + self.dim_local)

    @property
    def global_index(self) -> np.ndarray:
        return np.arange(self.dim_state + self.dim_local, self.dim)


@dataclass
class ParticleCloud:
    samples: np.ndarray  # (N, D)
    log_weights: np.ndarray  # (N,)
    layout: CloudLayout

    def __post_init__(self):
        n, d = self.samples.shape
        if n < 1:
            raise ValueError("a cloud needs at least one particle")
        if d != self.layout.dim:
            raise ValueError(f"samples have {d} columns, layout expects {self.layout.dim}")
        if self.log_weights.shape != (n,):
            raise ValueError("log_weights must have one entry per particle")
        if np.isnan(self.log_weights).any():
            raise ValueError("log_weights contain NaN")

    @property
    def N(self) -> int:
        return self.samples.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return normalize(self.log_weights)

    @property
    def x(self):
        return self.samples[:, self.layout.state]

    @property
    def theta_local(self):
        return self.samples[:, self.layout.local]

    @property
    def theta_global(self):
        return self.samples[:, self.layout.glob]

    def copy(self) -> "ParticleCloud":
        return ParticleCloud(self.samples.copy(), self.log_weights.copy(), self.layout)


def normalize(log_weights) -> np.ndarray:
    """Return ``exp(lw - logsumexp(lw))`` computed as a max-shifted ratio.

    Raises
    ------
    DegenerateWeights
        If no entry is finite from below (all ``-inf``).
    """
    lw = np.asarray(log_weights, dtype=float)
    if np.isnan(lw).any():
        raise ValueError("log-weights contain NaN")
    if lw.size == 0 or not np.any(lw > -np.inf):
        raise DegenerateWeights("all log-weights are -inf")
    if np.any(lw == np.inf):
        raise DegenerateWeights("log-weights contain +inf")
    # max-shift rather than logsumexp: any shift that is exact in lw + c
    # then gives bit-identical output
    w = np.exp(lw - lw.max())
    return w / w.sum()


def weighted_mean_cov(samples, weights):
    """Weighted mean and population covariance (no Bessel correction)."""
    z = np.asarray(samples, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    w = np.asarray(weights, dtype=float)
    mean = w @ z
    dz = z - mean
    cov = (dz * w[:, None]).T @ dz
    return mean, 0.5 * (cov + cov.T)


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return 1.0 / np.sum(w**2)


def systematic_resample(weights, M: int, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling: one uniform offset, ``M`` evenly spaced pointers.

    Index ``n`` is returned either floor(M w_n) or ceil(M w_n) times.
    """
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    w = np.asarray(weights, dtype=float)
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    positions = (rng.random() + np.arange(M)) / M
    idx = np.searchsorted(cdf, positions, side="right")
    return np.minimum(idx, len(w) - 1)
