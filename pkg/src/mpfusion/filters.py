"""Particle filters for joint state and static-parameter estimation.

Four variants share one state container:

``spf``
    Single bootstrap filter over ``[x | theta]`` with a Gaussian random walk
    on the parameters, systematic resampling every step.
``dapf``
    Single bootstrap filter whose resampling step is replaced by redrawing
    every particle from a moment-matched joint Gaussian.
``mpf``
    K independent ``spf`` filters, one per state block, each with its own
    copy of the global parameters; the global estimate averages the K.
``mpf-fusion``
    K filters whose global-parameter marginals are fused into one Gaussian
    each step, which then drives a Gaussian resampling of every filter.

Every step updates the state in place and returns it with the point
estimates computed from the weighted (pre-resampling) particles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import gaussian as gs
from .gaussian import Gaussian, NumericalFailure
from .linear import make_linear_gaussian_oracle  # noqa: F401  (re-exported)
from .model import Partitioning, make_partitioning
from .particles import (
    CloudLayout,
    DegenerateWeights,
    ParticleCloud,
    normalize,
    systematic_resample,
)

VARIANTS = ("spf", "dapf", "mpf", "mpf-fusion")
SINGLE = ("spf", "dapf")


@dataclass
class Estimates:
    state_mean: np.ndarray
    theta_mean: np.ndarray
    per_filter_theta: np.ndarray | None = None  # (K, dim_global) for MPF variants


@dataclass
class FilterState:
    variant: str
    model: object
    partitioning: Partitioning
    clouds: list[ParticleCloud]
    rngs: list[np.random.Generator]
    fusion_rng: np.random.Generator
    fused_prior: Gaussian | None = None
    t: int = 0
    failed: bool = False
    estimates: Estimates | None = None
    sigma_rw2: float = 0.01
    floor: float = gs.DEFAULT_FLOOR
    # diagnostics
    fusion_fallbacks: int = 0
    fusion_failures: int = 0
    last_fits: list[Gaussian] = field(default_factory=list)
    last_fused: Gaussian | None = None

    @property
    def K(self) -> int:
        return len(self.clouds)

    def blocks(self):
        if self.variant in SINGLE:
            return [(None, slice(0, self.model.d_x), slice(0, self.model.d_y))]
        p = self.partitioning
        return list(zip(range(p.K), p.state_blocks, p.obs_blocks))


def _streams(seed, K):
    """Per-cloud generators and one for the fusion stage.

    Cloud k always gets spawn key (0, k), so a K=1 run shares its stream
    with a single-filter run from the same seed.
    """
    if isinstance(seed, np.random.SeedSequence):
        entropy = seed.entropy
    else:
        entropy = int(seed)
    clouds = [np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(0, k))) for k in range(K)]
    fusion = np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(1,)))
    return clouds, fusion


def init(
    variant: str,
    model,
    partitioning: Partitioning | None,
    N_total: int,
    seed,
    sigma_rw2: float = 0.01,
    floor: float = gs.DEFAULT_FLOOR,
) -> FilterState:
    """Draw initial particles from the model priors with uniform weights.

    Single filters get one cloud of ``N_total`` particles over the full state;
    MPF variants get ``K`` clouds of ``N_total / K`` particles over their block.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if partitioning is None:
        partitioning = make_partitioning(model.d_x, 1)
    if partitioning.d_x != model.d_x:
        raise ValueError(f"partitioning covers {partitioning.d_x} dimensions, model has {model.d_x}")
    g = model.dim_global
    if variant in SINGLE:
        if model.dim_local:
            raise ValueError(f"{variant} does not support local parameters")
        specs = [(None, slice(0, model.d_x), N_total)]
    else:
        K = partitioning.K
        if N_total % K:
            raise ValueError(f"N_total={N_total} is not divisible by K={K}")
        specs = [(k, sl, N_total // K) for k, sl in enumerate(partitioning.state_blocks)]

    rngs, fusion_rng = _streams(seed, len(specs))
    gm, gc = model.global_prior()
    prior = Gaussian(gm, gc) if g else None
    clouds = []
    for (k, sl, n), rng in zip(specs, rngs):
        layout = CloudLayout(sl.stop - sl.start, model.dim_local, g)
        x = model.sample_initial(n, rng, sl)
        parts = [x]
        if model.dim_local:
            lm, lc = model.local_prior(k)
            parts.append(gs.sample(Gaussian(lm, lc), rng, n))
        if g:
            parts.append(gs.sample(prior, rng, n))
        clouds.append(ParticleCloud(np.hstack(parts), np.zeros(n), layout))

    state = FilterState(
        variant=variant,
        model=model,
        partitioning=partitioning,
        clouds=clouds,
        rngs=rngs,
        fusion_rng=fusion_rng,
        fused_prior=prior if variant == "mpf-fusion" else None,
        sigma_rw2=sigma_rw2,
        floor=floor,
    )
    state.estimates = _prior_estimates(state)
    return state


def _prior_estimates(state):
    state_mean = np.concatenate([c.x.mean(axis=0) for c in state.clouds])
    thetas = np.array([c.theta_global.mean(axis=0) for c in state.clouds])
    return Estimates(state_mean, thetas.mean(axis=0), thetas if state.variant not in SINGLE else None)


def _propagate_weight(state, cloud, rng, y_block, sl, k, random_walk):
    """Bootstrap move and likelihood weighting; returns new samples and normalized weights."""
    model = state.model
    lay = cloud.layout
    z = cloud.samples.copy()
    if random_walk and lay.dim_local + lay.dim_global:
        static = slice(lay.dim_state, lay.dim)
        z[:, static] += np.sqrt(state.sigma_rw2) * rng.standard_normal((cloud.N, lay.dim - lay.dim_state))
    th_l, th_g = z[:, lay.local], z[:, lay.glob]
    z[:, lay.state] = model.propagate(z[:, lay.state], th_l, th_g, rng, sl, k)
    lw = cloud.log_weights + model.loglik(y_block, z[:, lay.state], th_l, th_g, sl, k)
    lw = np.where(np.isnan(lw), -np.inf, lw)
    return z, normalize(lw)


def _fail(state):
    state.failed = True
    state.t += 1
    return state, state.estimates


def _combine(state, means):
    lays = [c.layout for c in state.clouds]
    state_mean = np.concatenate([m[lay.state] for m, lay in zip(means, lays)])
    thetas = np.array([m[lay.glob] for m, lay in zip(means, lays)])
    per = thetas if state.variant not in SINGLE else None
    return Estimates(state_mean, thetas.mean(axis=0), per)


def _resampling_step(state, y_t, random_walk):
    """Shared body of ``spf_step`` and ``mpf_step_no_fusion``."""
    y_t = np.asarray(y_t, dtype=float)
    if state.failed:
        state.t += 1
        return state, state.estimates
    moved = []
    try:
        for (k, sl, ol), cloud, rng in zip(state.blocks(), state.clouds, state.rngs):
            moved.append(_propagate_weight(state, cloud, rng, y_t[ol], sl, k, random_walk))
    except DegenerateWeights:
        return _fail(state)
    means = [w @ z for z, w in moved]
    for i, ((z, w), rng) in enumerate(zip(moved, state.rngs)):
        idx = systematic_resample(w, len(w), rng)
        state.clouds[i] = ParticleCloud(z[idx], np.zeros(len(w)), state.clouds[i].layout)
    state.t += 1
    state.estimates = _combine(state, means)
    return state, state.estimates


def spf_step(state: FilterState, y_t) -> tuple[FilterState, Estimates]:
    """Random-walk parameter move, bootstrap propagation, weighting, systematic resampling."""
    if state.variant != "spf":
        raise ValueError(f"spf_step called on a {state.variant} state")
    return _resampling_step(state, y_t, random_walk=True)


def mpf_step_no_fusion(state: FilterState, y_t) -> tuple[FilterState, Estimates]:
    """Run the ``spf_step`` recipe independently in every block filter."""
    if state.variant != "mpf":
        raise ValueError(f"mpf_step_no_fusion called on a {state.variant} state")
    return _resampling_step(state, y_t, random_walk=True)


def dapf_step(state: FilterState, y_t) -> tuple[FilterState, Estimates]:
    """Bootstrap step with static parameters, then redraw all particles from a fitted joint Gaussian."""
    if state.variant != "dapf":
        raise ValueError(f"dapf_step called on a {state.variant} state")
    y_t = np.asarray(y_t, dtype=float)
    if state.failed:
        state.t += 1
        return state, state.estimates
    (k, sl, ol), cloud, rng = state.blocks()[0], state.clouds[0], state.rngs[0]
    try:
        z, w = _propagate_weight(state, cloud, rng, y_t[ol], sl, k, random_walk=False)
    except DegenerateWeights:
        return _fail(state)
    try:
        fit = gs.fit_from_weighted(z, w, state.floor)
        state.last_fits = [fit]
        redrawn = gs.sample(fit, rng, cloud.N)
    except NumericalFailure:
        return _fail(state)
    state.clouds[0] = ParticleCloud(redrawn, np.zeros(cloud.N), cloud.layout)
    state.t += 1
    state.estimates = _combine(state, [w @ z])
    return state, state.estimates


def resampling_distribution(fit: Gaussian, fused: Gaussian, layout: CloudLayout) -> Gaussian:
    """Joint law of a particle resampled by the fusion step, in cloud column order.

    Global parameters follow ``fused``; the substate and local parameters
    follow the conditional of ``fit`` given those globals.
    """
    a, b = layout.state_local_index, layout.global_index
    if b.size == 0:
        return fit
    gain, ccov = gs.conditional_gain(fit, a, b)
    mean = np.empty(layout.dim)
    cov = np.empty((layout.dim, layout.dim))
    mean[a] = fit.mean[a] + gain @ (fused.mean - fit.mean[b])
    mean[b] = fused.mean
    cross = gain @ fused.cov
    cov[np.ix_(a, a)] = ccov + cross @ gain.T
    cov[np.ix_(a, b)] = cross
    cov[np.ix_(b, a)] = cross.T
    cov[np.ix_(b, b)] = fused.cov
    return Gaussian(mean, cov)


def fusion_resample(
    fits: Sequence[Gaussian],
    fused: Gaussian | None,
    layouts: Sequence[CloudLayout],
    sizes: Sequence[int],
    rngs: Sequence[np.random.Generator],
    floor: float = gs.DEFAULT_FLOOR,
) -> list[ParticleCloud]:
    """Redraw every filter's particles given the fused global-parameter posterior.

    Filter k draws its globals from ``fused`` and then its substate and local
    parameters from the conditional of ``fits[k]``, using only ``rngs[k]``.
    """
    out = []
    for fit, lay, n, rng in zip(fits, layouts, sizes, rngs):
        a, b = lay.state_local_index, lay.global_index
        z = np.empty((n, lay.dim))
        if b.size == 0:
            z[:] = gs.sample(Gaussian(fit.mean, gs.ensure_pd(fit.cov, floor)), rng, n)
        else:
            th = gs.sample(fused, rng, n)
            gain, ccov = gs.conditional_gain(fit, a, b)
            L = np.linalg.cholesky(gs.ensure_pd(ccov, floor))
            z[:, a] = fit.mean[a] + (th - fit.mean[b]) @ gain.T + rng.standard_normal((n, a.size)) @ L.T
            z[:, b] = th
        out.append(ParticleCloud(z, np.zeros(n), lay))
    return out


def mpf_step_fusion(state: FilterState, y_t) -> tuple[FilterState, Estimates]:
    """One step of MPF with fused global parameters.

    Each filter propagates with static parameters and weights by its block
    likelihood; a Gaussian is fitted per filter, the K global marginals are
    fused against the previous fused posterior, and every filter is redrawn
    from the fused marginal and its own conditional.
    """
    if state.variant != "mpf-fusion":
        raise ValueError(f"mpf_step_fusion called on a {state.variant} state")
    y_t = np.asarray(y_t, dtype=float)
    if state.failed:
        state.t += 1
        return state, state.estimates
    moved = []
    try:
        for (k, sl, ol), cloud, rng in zip(state.blocks(), state.clouds, state.rngs):
            moved.append(_propagate_weight(state, cloud, rng, y_t[ol], sl, k, random_walk=False))
    except DegenerateWeights:
        return _fail(state)
    try:
        fits = [gs.fit_from_weighted(z, w, state.floor) for z, w in moved]
    except NumericalFailure:
        return _fail(state)
    layouts = [c.layout for c in state.clouds]

    fused = state.fused_prior
    if state.model.dim_global:
        margins = [gs.marginal(f, lay.global_index) for f, lay in zip(fits, layouts)]
        try:
            res = gs.fuse_with_info(margins, state.fused_prior, state.floor)
            fused = res.gaussian
            state.fusion_fallbacks += res.fallback != "none"
        except NumericalFailure:
            state.fusion_failures += 1
    state.last_fits = fits
    state.last_fused = fused

    try:
        state.clouds = fusion_resample(fits, fused, layouts, [c.N for c in state.clouds], state.rngs, state.floor)
    except (NumericalFailure, np.linalg.LinAlgError):
        return _fail(state)
    state.fused_prior = fused
    state.t += 1
    means = [w @ z for z, w in moved]
    est = _combine(state, means)
    if fused is not None:
        est.theta_mean = fused.mean.copy()
    state.estimates = est
    return state, est


STEPS = {
    "spf": spf_step,
    "dapf": dapf_step,
    "mpf": mpf_step_no_fusion,
    "mpf-fusion": mpf_step_fusion,
}


def step(state: FilterState, y_t) -> tuple[FilterState, Estimates]:
    """Dispatch to the step function of ``state.variant``."""
    return STEPS[state.variant](state, y_t)


def run_filter(state: FilterState, observations) -> list[Estimates]:
    """Step through every row of ``observations``; returns one Estimates per row."""
    out = []
    for y in observations:
        _, est = step(state, y)
        out.append(Estimates(est.state_mean.copy(), est.theta_mean.copy(), est.per_filter_theta))
    return out


__all__ = [
    "VARIANTS",
    "Estimates",
    "FilterState",
    "init",
    "spf_step",
    "dapf_step",
    "mpf_step_no_fusion",
    "mpf_step_fusion",
    "fusion_resample",
    "resampling_distribution",
    "make_linear_gaussian_oracle",
    "run_filter",
    "step",
]
