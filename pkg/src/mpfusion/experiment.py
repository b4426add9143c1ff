"""Monte Carlo protocol: paired realizations, per-step MSE, averaged curves.

Seeds
-----
All randomness derives from ``master_seed`` through :func:`derive_seed`,
which hashes ``(master, index, label)`` with BLAKE2b (8-byte digest,
key-less) over the little-endian encodings of ``master`` and ``index``
followed by the UTF-8 label.  For realization ``i``::

    r      = derive_seed(master_seed, i, "realization")
    traj   = derive_seed(r, 0, "trajectory")
    filter = derive_seed(r, 0, "filter:" + algorithm)

so every algorithm sees the same trajectory for a given ``i`` and adding or
reordering algorithms never changes another algorithm's rows.

MSE convention
--------------
``mse_state(t) = |x_hat_t - x_t|^2 / d_x`` and
``mse_param(t) = |theta_hat_t - theta_true|^2 / d_theta_g`` (per-dimension
averages).  Summary rows average over realizations whose row is not flagged
failed.
"""

from __future__ import annotations

import hashlib
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import filters
from .model import BenchmarkModel, Trajectory, make_partitioning, THETA_TRUE

ALGORITHMS = ("spf", "dapf", "mpf", "mpf-fusion")
MSE_CONVENTION = "per-dimension: |x_hat-x|^2/d_x and |theta_hat-theta|^2/d_theta_g"


def derive_seed(master: int, index: int, label: str) -> int:
    """Stable 64-bit child seed of ``(master, index, label)``."""
    payload = struct.pack("<QQ", master & 0xFFFFFFFFFFFFFFFF, index & 0xFFFFFFFFFFFFFFFF) + label.encode()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class ExperimentConfig:
    d_x: int = 10
    d_theta_g: int = 2
    theta_full: tuple[float, ...] = THETA_TRUE
    sigma_u2: float = 2.0
    sigma_v2: float = 1.0
    T: int = 50
    K: int = 5
    particles_per_unit: int = 100
    realizations: int = 100
    algorithms: tuple[str, ...] = ALGORITHMS
    master_seed: int = 0
    sigma_rw2: float = 0.01
    pd_floor: float = 1e-9

    def __post_init__(self):
        object.__setattr__(self, "theta_full", tuple(float(v) for v in self.theta_full))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        self.validate()

    def validate(self):
        def bad(name, why):
            raise ValueError(f"{name}: {why}")

        if self.d_x < 1:
            bad("d_x", "must be >= 1")
        if not 1 <= self.d_theta_g <= 5:
            bad("d_theta_g", "must be in 1..5")
        if len(self.theta_full) != 5:
            bad("theta_full", "must have 5 entries")
        if self.sigma_u2 <= 0:
            bad("sigma_u2", "must be > 0")
        if self.sigma_v2 <= 0:
            bad("sigma_v2", "must be > 0")
        if self.T < 1:
            bad("T", "must be >= 1")
        if self.K < 1:
            bad("K", "must be >= 1")
        if self.particles_per_unit < 1:
            bad("particles_per_unit", "must be >= 1")
        if self.realizations < 1:
            bad("realizations", "must be >= 1")
        if not self.algorithms:
            bad("algorithms", "must name at least one algorithm")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                bad("algorithms", f"unknown algorithm {a!r}")
        if len(set(self.algorithms)) != len(self.algorithms):
            bad("algorithms", "duplicate entries")
        if self.sigma_rw2 < 0:
            bad("sigma_rw2", "must be >= 0")
        if self.pd_floor <= 0:
            bad("pd_floor", "must be > 0")
        if any(a.startswith("mpf") for a in self.algorithms):
            if self.d_x % self.K:
                bad("K", f"d_x={self.d_x} is not divisible by K={self.K}")
            if self.N_total % self.K:
                bad("K", f"N_total={self.N_total} is not divisible by K={self.K}")

    @property
    def N_total(self) -> int:
        return self.particles_per_unit * self.d_theta_g * self.d_x

    def model(self) -> BenchmarkModel:
        return BenchmarkModel(
            d_x=self.d_x,
            dim_global=self.d_theta_g,
            theta_full=self.theta_full,
            sigma_u2=self.sigma_u2,
            sigma_v2=self.sigma_v2,
        )

    def budget(self) -> dict:
        """Particle counts actually used by each family of filters."""
        return {"N_total": self.N_total, "K": self.K, "N_k": self.N_total // self.K}


@dataclass(frozen=True)
class DetailRow:
    algorithm: str
    realization: int
    t: int
    mse_state: float
    mse_param: float
    failed: bool


@dataclass(frozen=True)
class SummaryRow:
    algorithm: str
    t: int
    avg_mse_state: float
    avg_mse_param: float
    n_failed: int


@dataclass
class ResultTable:
    details: list[DetailRow]
    summary: list[SummaryRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def failures(self) -> dict[str, int]:
        """Realizations per algorithm with at least one failed step."""
        out: dict[str, set] = {}
        for r in self.details:
            out.setdefault(r.algorithm, set())
            if r.failed:
                out[r.algorithm].add(r.realization)
        return {a: len(s) for a, s in out.items()}

    def curve(self, algorithm: str, column: str) -> np.ndarray:
        """Summary column for one algorithm ordered by t (t = 1..T)."""
        rows = sorted((r for r in self.summary if r.algorithm == algorithm), key=lambda r: r.t)
        return np.array([getattr(r, column) for r in rows])

    def at(self, algorithm: str, t: int) -> SummaryRow:
        for r in self.summary:
            if r.algorithm == algorithm and r.t == t:
                return r
        raise KeyError((algorithm, t))


def score(trajectory: Trajectory, theta_true, state_means, theta_means, failed=None):
    """Per-step MSE of point estimates against the truth.

    Returns ``(mse_state, mse_param)`` arrays of length T.
    """
    xs = np.asarray(state_means, dtype=float)
    ths = np.asarray(theta_means, dtype=float)
    theta_true = np.asarray(theta_true, dtype=float)
    mse_state = np.sum((xs - trajectory.states) ** 2, axis=1) / trajectory.states.shape[1]
    if theta_true.size:
        mse_param = np.sum((ths - theta_true) ** 2, axis=1) / theta_true.size
    else:
        mse_param = np.zeros(len(xs))
    return mse_state, mse_param


def realization_seeds(master_seed: int, i: int, algorithm: str) -> tuple[int, int]:
    r = derive_seed(master_seed, i, "realization")
    return derive_seed(r, 0, "trajectory"), derive_seed(r, 0, "filter:" + algorithm)


def run_realization(config: ExperimentConfig, algorithm: str, realization: int) -> list[DetailRow]:
    """Simulate realization ``realization`` and run one algorithm over it."""
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    model = config.model()
    traj_seed, filter_seed = realization_seeds(config.master_seed, realization, algorithm)
    traj = model.simulate(config.T, np.random.default_rng(traj_seed))
    K = config.K if algorithm.startswith("mpf") else 1
    state = filters.init(
        algorithm,
        model,
        make_partitioning(config.d_x, K),
        config.N_total,
        filter_seed,
        sigma_rw2=config.sigma_rw2,
        floor=config.pd_floor,
    )
    xs, ths, failed = [], [], []
    for y in traj.observations:
        _, est = filters.step(state, y)
        xs.append(est.state_mean.copy())
        ths.append(est.theta_mean.copy())
        failed.append(state.failed)
    mse_state, mse_param = score(traj, model.theta_true, xs, ths)
    return [
        DetailRow(algorithm, realization, t + 1, float(ms), float(mp), bool(f))
        for t, (ms, mp, f) in enumerate(zip(mse_state, mse_param, failed))
    ]


def summarize(details: list[DetailRow]) -> list[SummaryRow]:
    """Average detail rows per (algorithm, t) over non-failed realizations."""
    groups: dict[tuple[str, int], list[DetailRow]] = {}
    for r in details:
        groups.setdefault((r.algorithm, r.t), []).append(r)
    out = []
    for (alg, t), rows in groups.items():
        ok = sorted((r for r in rows if not r.failed), key=lambda r: r.realization)
        n_failed = len(rows) - len(ok)
        if ok:
            ms = float(np.mean([r.mse_state for r in ok]))
            mp = float(np.mean([r.mse_param for r in ok]))
        else:
            ms = mp = float("nan")
        out.append(SummaryRow(alg, t, ms, mp, n_failed))
    order = {a: i for i, a in enumerate(ALGORITHMS)}
    out.sort(key=lambda r: (order[r.algorithm], r.t))
    return out


def _cell(args):
    config, algorithm, i = args
    return run_realization(config, algorithm, i)


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ResultTable:
    """Run every (algorithm, realization) cell and aggregate.

    Output order is canonical (algorithm, realization, t), independent of
    ``workers``.
    """
    config.validate()
    cells = [(config, a, i) for a in config.algorithms for i in range(config.realizations)]
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_cell, cells))
    else:
        chunks = [_cell(c) for c in cells]
    order = {a: i for i, a in enumerate(ALGORITHMS)}
    details = sorted(
        (r for chunk in chunks for r in chunk), key=lambda r: (order[r.algorithm], r.realization, r.t)
    )
    meta = {"budget": config.budget(), "mse_convention": MSE_CONVENTION}
    return ResultTable(details, summarize(details), meta)


def config_as_dict(config: ExperimentConfig) -> dict:
    d = asdict(config)
    d["theta_full"] = list(config.theta_full)
    d["algorithms"] = list(config.algorithms)
    return d


def config_fields() -> dict[str, type]:
    return {f.name: f.type for f in fields(ExperimentConfig)}


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(config, **kw)
