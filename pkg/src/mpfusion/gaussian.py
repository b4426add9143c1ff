"""Multivariate Gaussian algebra for particle-cloud summaries.

Covers moment-matched fitting, marginals, conditionals, Cholesky sampling
and the fusion of K posteriors that share a common prior::

    P_q = sum_k P_k - (K - 1) P_0
    m_q = P_q^{-1} (sum_k P_k m_k - (K - 1) P_0 m_0)

where ``P = inv(Sigma)`` are precisions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .particles import ParticleCloud, weighted_mean_cov

logger = logging.getLogger(__name__)

DEFAULT_FLOOR = 1e-9


class NumericalFailure(ArithmeticError):
    """A covariance or precision could not be made usable."""


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match mean length {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def precision(self) -> np.ndarray:
        return _spd_inverse(self.cov)

    def log_pdf(self, x) -> np.ndarray:
        """Log-density at ``x`` of shape (D,) or (n, D)."""
        x = np.asarray(x, dtype=float)
        L = _cholesky(self.cov, "log_pdf")
        r = linalg.solve_triangular(L, (x - self.mean).T, lower=True)
        maha = np.sum(r**2, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        return -0.5 * (maha + logdet + self.dim * np.log(2.0 * np.pi))

    def entropy(self) -> float:
        _, logdet = np.linalg.slogdet(self.cov)
        return 0.5 * (self.dim * (1.0 + np.log(2.0 * np.pi)) + logdet)


def _cholesky(cov, what):
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalFailure(f"Cholesky of {what} failed") from exc


def _spd_inverse(a):
    if a.size == 0:
        return a.copy()
    c, low = linalg.cho_factor(a, lower=True)
    inv = linalg.cho_solve((c, low), np.eye(a.shape[0]))
    return 0.5 * (inv + inv.T)


def _scale(cov) -> float:
    d = cov.shape[0]
    return max(np.trace(cov) / d, 1e-300) if d else 1.0


def ensure_pd(cov, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """Symmetrize, then lift eigenvalues below ``floor * max(trace/D, 1e-300)`` to that level.

    Matrices whose eigenvalues already clear the floor come back as their
    symmetric part, untouched by the eigendecomposition.  The floor is never
    below ``D * eps * max|eigenvalue|``, so the result always admits Cholesky.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {cov.shape}")
    sym = 0.5 * (cov + cov.T)
    if sym.shape[0] == 0:
        return sym
    if not np.all(np.isfinite(sym)):
        raise NumericalFailure("covariance has non-finite entries")
    level = floor * _scale(sym)
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() >= level:
        return sym
    # a trace-relative floor can sit below rounding of the largest eigenvalue
    # (indefinite input with trace <= 0); raise it until Cholesky succeeds
    level = max(level, sym.shape[0] * np.finfo(float).eps * np.abs(vals).max())
    while np.isfinite(level):
        out = (vecs * np.maximum(vals, level)) @ vecs.T
        out = 0.5 * (out + out.T)
        try:
            linalg.cholesky(out, lower=True)
            return out
        except linalg.LinAlgError:
            level *= 10.0
    raise NumericalFailure("no eigenvalue floor makes the covariance positive definite")


def fit_from_weighted(cloud_or_samples, weights=None, floor: float = DEFAULT_FLOOR) -> Gaussian:
    """Moment-matched Gaussian of a weighted particle set, with jitter floor.

    Accepts a :class:`ParticleCloud` or a ``(samples, weights)`` pair.
    """
    if isinstance(cloud_or_samples, ParticleCloud):
        samples, weights = cloud_or_samples.samples, cloud_or_samples.weights
    else:
        samples = cloud_or_samples
    mean, cov = weighted_mean_cov(samples, weights)
    if not np.any(cov):
        # all particles coincide; the trace scale is zero so use unit scale
        return Gaussian(mean, floor * np.eye(mean.size))
    return Gaussian(mean, ensure_pd(cov, floor))


def _as_index(idx, dim):
    idx = np.atleast_1d(np.asarray(idx, dtype=int))
    if idx.size and (idx.min() < 0 or idx.max() >= dim):
        raise ValueError(f"index set {idx.tolist()} out of range for dimension {dim}")
    return idx


def marginal(g: Gaussian, idx) -> Gaussian:
    idx = _as_index(idx, g.dim)
    if idx.size == 0:
        raise ValueError("marginal index set is empty")
    return Gaussian(g.mean[idx], g.cov[np.ix_(idx, idx)])


def conditional_gain(g: Gaussian, target_idx, given_idx):
    """Regression matrix and residual covariance of the target block on the given block.

    Returns ``(gain, cov)`` such that the conditional mean is
    ``mean_a + (value - mean_b) @ gain.T`` and the conditional covariance is ``cov``.
    """
    a = _as_index(target_idx, g.dim)
    b = _as_index(given_idx, g.dim)
    if np.intersect1d(a, b).size:
        raise ValueError("target and given index sets overlap")
    s_aa = g.cov[np.ix_(a, a)]
    if b.size == 0:
        return np.zeros((a.size, 0)), s_aa
    s_ab = g.cov[np.ix_(a, b)]
    s_bb = g.cov[np.ix_(b, b)]
    try:
        c = linalg.cho_factor(s_bb, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalFailure(f"given block {b.tolist()} has a singular covariance") from exc
    gain = linalg.cho_solve(c, s_ab.T).T
    cov = s_aa - gain @ s_ab.T
    return gain, 0.5 * (cov + cov.T)


def conditional(g: Gaussian, target_idx, given_idx, given_value) -> Gaussian:
    """Distribution of the target block given the other block equals ``given_value``."""
    a = _as_index(target_idx, g.dim)
    b = _as_index(given_idx, g.dim)
    gain, cov = conditional_gain(g, a, b)
    value = np.atleast_1d(np.asarray(given_value, dtype=float))
    if value.shape != (b.size,):
        raise ValueError(f"given_value has shape {value.shape}, expected ({b.size},)")
    return Gaussian(g.mean[a] + gain @ (value - g.mean[b]), cov)


def sample(g: Gaussian, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw ``mean + L eps`` with ``L`` the lower Cholesky factor.

    Returns shape (D,) when ``size`` is None, else (size, D).
    """
    L = _cholesky(g.cov, "sampling covariance")
    if size is None:
        return g.mean + L @ rng.standard_normal(g.dim)
    return g.mean + rng.standard_normal((size, g.dim)) @ L.T


@dataclass(frozen=True)
class FusionResult:
    gaussian: Gaussian
    fallback: str  # "none", "clamped" or "projected"


def fuse_with_info(
    locals_: Sequence[Gaussian], prior: Gaussian, floor: float = DEFAULT_FLOOR
) -> FusionResult:
    """Fuse K local posteriors that each used ``prior``; report any fallback taken.

    When the combined precision is not positive definite its eigenvalues are
    first clamped at ``floor`` times the precision scale.  If that leaves a
    fused covariance broader than the broadest input (which exact fusion can
    never produce), the information gained over the prior,
    ``sum_k P_k - K P_0``, is projected onto its positive eigendirections and
    added back to the prior.  That keeps the prior counted exactly once and
    discards only directions in which the locals claim negative information.
    """
    K = len(locals_)
    if K < 1:
        raise ValueError("need at least one local posterior")
    d = prior.dim
    for g in locals_:
        if g.dim != d:
            raise ValueError(f"local posterior of dimension {g.dim} does not match prior dimension {d}")
    if K == 1:
        return FusionResult(locals_[0], "none")
    try:
        with np.errstate(over="raise", invalid="raise"):
            return _fuse(locals_, prior, floor)
    except (linalg.LinAlgError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise NumericalFailure(f"fusion broke down: {exc}") from exc


def _fuse(locals_, prior, floor):
    K = len(locals_)
    precisions = [_safe_precision(g.cov, floor) for g in locals_]
    p_sum = sum(precisions)
    h_sum = sum(P @ g.mean for P, g in zip(precisions, locals_))
    p0 = _safe_precision(prior.cov, floor)
    h0 = p0 @ prior.mean
    prec = p_sum - (K - 1) * p0
    info = h_sum - (K - 1) * h0
    prec = 0.5 * (prec + prec.T)

    vals, vecs = np.linalg.eigh(prec)
    level = floor * _scale(p_sum)
    if vals.min() >= level:
        fallback = "none"
        cov = _spd_inverse(prec)
    else:
        fallback = "clamped"
        cov = (vecs / np.maximum(vals, level)) @ vecs.T
        widest = max(np.linalg.eigvalsh(g.cov).max() for g in (*locals_, prior))
        if np.linalg.eigvalsh(cov).max() > widest:
            fallback = "projected"
            gain_p = prec - p0
            gain_h = info - h0
            gv, gq = np.linalg.eigh(0.5 * (gain_p + gain_p.T))
            keep = gv > 0
            gain_p = (gq * np.where(keep, gv, 0.0)) @ gq.T
            gain_h = gq @ (keep * (gq.T @ gain_h))
            cov = _spd_inverse(ensure_pd(p0 + gain_p, floor))
            info = h0 + gain_h
    mean = cov @ info
    cov = 0.5 * (cov + cov.T)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise NumericalFailure("fused moments are not finite")
    if fallback != "none":
        logger.debug("fusion fallback %s triggered", fallback)
    return FusionResult(Gaussian(mean, cov), fallback)


def fuse(locals_: Sequence[Gaussian], prior: Gaussian, floor: float = DEFAULT_FLOOR) -> Gaussian:
    """Optimal Bayesian fusion of K posteriors sharing ``prior``; see :func:`fuse_with_info`."""
    return fuse_with_info(locals_, prior, floor).gaussian


def _safe_precision(cov, floor):
    try:
        return _spd_inverse(cov)
    except linalg.LinAlgError:
        return _spd_inverse(ensure_pd(cov, floor))
