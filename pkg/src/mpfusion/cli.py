"""Command-line entry point: ``run``, ``simulate`` and ``fuse-debug``.

Config files are flat ``key = value`` lines with ``#`` comments; the keys
are the :class:`~mpfusion.experiment.ExperimentConfig` field names and every
key can also be given as ``--set key=value``.  List values (``theta_full``,
``algorithms``) are comma separated.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .experiment import ExperimentConfig, config_as_dict, run_experiment
from .gaussian import Gaussian, NumericalFailure, fuse_with_info


class ConfigError(ValueError):
    pass


_LISTS = {"theta_full": float, "algorithms": str}


def _convert(key, raw):
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    raw = raw.strip()
    try:
        if key in _LISTS:
            return tuple(_LISTS[key](v.strip()) for v in raw.split(",") if v.strip())
        if types[key] in ("int", int):
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = _convert(key.strip(), value)
    return out


def load_config(path, overrides=()) -> ExperimentConfig:
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
        values.update(parse_config_text(text))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        key = key.strip().rsplit(".", 1)[-1]
        values[key] = _convert(key, value)
    try:
        return ExperimentConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def fmt(v) -> str:
    """Shortest round-trip text for floats, plain ints and 0/1 for flags."""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def cmd_run(config_path, overrides, out_dir, threads=None) -> int:
    try:
        config = load_config(config_path, overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = threads or os.cpu_count() or 1
    started = datetime.now(timezone.utc).isoformat()
    table = run_experiment(config, workers=workers)
    finished = datetime.now(timezone.utc).isoformat()

    _write_csv(
        out / "details.csv",
        ["algorithm", "realization", "t", "mse_state", "mse_param", "failed"],
        ((r.algorithm, r.realization, r.t, r.mse_state, r.mse_param, r.failed) for r in table.details),
    )
    _write_csv(
        out / "summary.csv",
        ["algorithm", "t", "avg_mse_state", "avg_mse_param", "n_failed"],
        ((r.algorithm, r.t, r.avg_mse_state, r.avg_mse_param, r.n_failed) for r in table.summary),
    )
    manifest = {
        "tool": "mpfusion",
        "version": __version__,
        "config": config_as_dict(config),
        "master_seed": config.master_seed,
        "budget": table.metadata["budget"],
        "mse_convention": table.metadata["mse_convention"],
        "failed_realizations": table.failures(),
        "started": started,
        "finished": finished,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return 0


def cmd_simulate(config_path, seed, out_path, overrides=()) -> int:
    try:
        config = load_config(config_path, overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    seed = config.master_seed if seed is None else seed
    traj = config.model().simulate(config.T, np.random.default_rng(seed))
    header = ["t"] + [f"x_{i}" for i in range(traj.states.shape[1])] + [f"y_{i}" for i in range(traj.observations.shape[1])]
    rows = ([t + 1, *map(float, x), *map(float, y)] for t, (x, y) in enumerate(zip(traj.states, traj.observations)))
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out_path, header, rows)
    return 0


def _gaussian_from(obj, what):
    try:
        return Gaussian(np.asarray(obj["mean"], dtype=float), np.asarray(obj["cov"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


def read_fusion_inputs(path):
    """Parse a JSON file ``{"prior": {"mean", "cov"}, "locals": [{"mean", "cov"}, ...]}``."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(doc, dict) or "prior" not in doc or not doc.get("locals"):
        raise ConfigError(f"{path}: need a 'prior' object and a non-empty 'locals' list")
    prior = _gaussian_from(doc["prior"], "prior")
    locals_ = [_gaussian_from(g, f"locals[{i}]") for i, g in enumerate(doc["locals"])]
    return locals_, prior


def cmd_fuse_debug(inputs_path, stream=None) -> int:
    stream = stream or sys.stdout
    try:
        locals_, prior = read_fusion_inputs(inputs_path)
        res = fuse_with_info(locals_, prior)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"error: fusion failed: {exc}", file=sys.stderr)
        return 2
    g = res.gaussian
    print("mean = " + ", ".join(fmt(float(v)) for v in g.mean), file=stream)
    for i, row in enumerate(g.cov):
        print(f"cov[{i}] = " + ", ".join(fmt(float(v)) for v in row), file=stream)
    if res.fallback == "none":
        print("fallback = none", file=stream)
    else:
        print(f"fallback = {res.fallback} (fused precision was not positive definite)", file=stream)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpfusion", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides")

    r = sub.add_parser("run", help="run the Monte Carlo experiment")
    common(r)
    r.add_argument("--out", metavar="DIR", required=True)
    r.add_argument("--threads", type=int, default=None, metavar="N")

    s = sub.add_parser("simulate", help="write one ground-truth trajectory as CSV")
    common(s)
    s.add_argument("--seed", type=int, default=None, metavar="U64")
    s.add_argument("--out", metavar="PATH", required=True)

    f = sub.add_parser("fuse-debug", help="fuse Gaussians read from a JSON file")
    f.add_argument("inputs", metavar="PATH")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        if args.threads is not None and args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 2
        return cmd_run(args.config, args.overrides, args.out, args.threads)
    if args.command == "simulate":
        return cmd_simulate(args.config, args.seed, args.out, args.overrides)
    return cmd_fuse_debug(args.inputs)


if __name__ == "__main__":
    sys.exit(main())
