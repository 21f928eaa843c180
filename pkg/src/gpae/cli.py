"""Command-line front end: train, transform, reconstruct, inspect."""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from gpae.artifacts import load_model, save_model, write_metrics_csv, write_reconstruction_strip
from gpae.autoencoder import ConfigError, TopologyKind, search_space_log2, split_encoder
from gpae.data import DataFormatError, Dataset, SplitSpec, load_dataset
from gpae.evolution import EvolutionConfig, evolve

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_FORMAT = 0, 2, 3, 4

PRESETS = {
    "table3-best": {"setup": "partitioned", "batch": "60", "passes": "5"},
}

MODEL_FILE = "model.gpae"
METRICS_FILE = "metrics.csv"
TIMING_FILE = "timing.csv"
STRIP_FILE = "reconstruction.pgm"


@dataclass
class RunConfig:
    evolution: EvolutionConfig
    train: str | None = None
    test: str | None = None
    out: str = "run"
    limit: int | None = None
    test_limit: int | None = None


def _opt_int(s: str) -> int | None:
    return None if s.strip().lower() in ("", "none") else int(s)


# config key -> (EvolutionConfig field, or None for run-level keys; value parser)
_KEYS = {
    "population_size": ("population_size", int),
    "max_depth": ("max_depth", int),
    "crossover_prob": ("crossover_prob", float),
    "mutation_prob": ("mutation_prob", float),
    "elitism_count": ("elitism_count", int),
    "generations": ("generations", _opt_int),
    "batch": ("minibatch_size", _opt_int),
    "passes": ("passes", int),
    "seed": ("seed", int),
    "setup": ("setup", str),
    "workers": ("parallel_workers", int),
    "n_code": ("n_code", _opt_int),
    "crossover_swaps": ("crossover_swaps", int),
    "train": (None, str),
    "test": (None, str),
    "out": (None, str),
    "limit": (None, _opt_int),
    "test_limit": (None, _opt_int),
}


def read_config_file(path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    entries: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected key=value, found {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _KEYS:
            raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
        entries[key] = value
    return entries


def build_run_config(entries: dict[str, str]) -> RunConfig:
    evo: dict = {}
    run: dict = {}
    for key, raw in entries.items():
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}")
        target, parse = _KEYS[key]
        try:
            value = parse(raw)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {raw!r}") from None
        if target is None:
            run[key] = value
        else:
            evo[target] = value
    if "setup" in evo and evo["setup"] not in {k.value for k in TopologyKind}:
        raise ConfigError(f"setup must be straightforward or partitioned, got {evo['setup']!r}")
    cfg = RunConfig(EvolutionConfig(**evo), **run)
    cfg.evolution.validate()
    for name in ("limit", "test_limit"):
        v = getattr(cfg, name)
        if v is not None and v < 1:
            raise ConfigError(f"{name} must be at least 1, got {v}")
    return cfg


def format_hms(seconds: float) -> str:
    s = int(round(seconds))
    return f"{s // 3600:02d}:{s % 3600 // 60:02d}:{s % 60:02d}"


# -- commands ---------------------------------------------------------------------


def cmd_train(cfg: RunConfig) -> int:
    if cfg.train is None:
        raise ConfigError("no training data given (--train or train=)")
    train = load_dataset(cfg.train, cfg.limit)
    test = None
    if cfg.test is not None:
        test = load_dataset(cfg.test, cfg.test_limit if cfg.test_limit is not None else cfg.limit)
        SplitSpec(train, test)
    result = evolve(train, cfg.evolution, test)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = dict(cfg.evolution.echo(), width=train.width, height=train.height)
    save_model(out / MODEL_FILE, result.model, result.topology, meta)
    write_metrics_csv(result.log, out / METRICS_FILE)
    write_metrics_csv(result.log, out / TIMING_FILE, timing=True)
    write_reconstruction_strip(result.model, test if test is not None else train, out / STRIP_FILE,
                               10, cfg.evolution.parallel_workers)

    line = f"train MSE {result.log.train_mse:.6f}"
    if result.log.test_mse is not None:
        line += f"  test MSE {result.log.test_mse:.6f}"
    print(f"{line}  time {format_hms(result.log.total_seconds)}")
    return EXIT_OK


def _check_geometry(n_in: int, data: Dataset) -> None:
    if data.n_features != n_in:
        raise DataFormatError(f"dataset has {data.n_features} features but the model expects {n_in}")


def cmd_transform(model_path, dataset_path, out_path, workers: int = 1, limit: int | None = None) -> int:
    model = load_model(model_path)
    data = load_dataset(dataset_path, limit)
    _check_geometry(model.topology.n_in, data)
    codes = split_encoder(model.individual, model.topology).transform(data.samples, workers)
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for row in codes:
            w.writerow([repr(float(v)) for v in row])
    return EXIT_OK


def cmd_reconstruct(model_path, dataset_path, out_path, count: int = 10, workers: int = 1) -> int:
    if count < 1:
        raise ConfigError("count must be at least 1")
    model = load_model(model_path)
    data = load_dataset(dataset_path)
    _check_geometry(model.topology.n_in, data)
    if count > data.count:
        print(f"warning: only {data.count} samples available, showing {data.count}", file=sys.stderr)
        count = data.count
    write_reconstruction_strip(model.individual, data, out_path, count, workers)
    return EXIT_OK


def _stats(values: Sequence[int]) -> str:
    v = np.asarray(values)
    return f"min {v.min()} mean {v.mean():.2f} max {v.max()}"


def cmd_inspect(model_path) -> int:
    model = load_model(model_path)
    topo, ind = model.topology, model.individual
    if topo.kind is TopologyKind.PARTITIONED:
        print(f"partitioned: {topo.n_blocks} blocks, code {topo.n_code} (inputs {topo.n_in})")
    else:
        print(f"straightforward: inputs {topo.n_in}, code {topo.n_code}")
    for name, forest in (("encoder", ind.encoder), ("decoder", ind.decoder)):
        print(f"{name}: {len(forest)} trees; size {_stats([t.size for t in forest])}; "
              f"depth {_stats([t.depth for t in forest])}")
    bits = search_space_log2(topo.n_code, 4, topo.n_in)
    print(f"straightforward search space (m={topo.n_code}, K=4, n={topo.n_in}): log2 size {bits:.6g}")
    return EXIT_OK


# -- argument handling --------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpae", description="Genetic-programming autoencoders.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="evolve an autoencoder and write its artifacts")
    t.add_argument("--config", help="key=value settings file")
    t.add_argument("--preset", choices=sorted(PRESETS))
    t.add_argument("--setup", choices=[k.value for k in TopologyKind])
    t.add_argument("--train")
    t.add_argument("--test")
    t.add_argument("--out")
    for flag in ("seed", "generations", "batch", "passes", "workers", "limit", "test-limit"):
        t.add_argument(f"--{flag}", type=int)

    for name, extra in (("transform", "CSV file for the codes"), ("reconstruct", "PGM strip")):
        s = sub.add_parser(name)
        s.add_argument("model")
        s.add_argument("dataset")
        s.add_argument("out", help=extra)
        s.add_argument("--workers", type=int)
        if name == "reconstruct":
            s.add_argument("--count", type=int, default=10)
        else:
            s.add_argument("--limit", type=int)

    i = sub.add_parser("inspect")
    i.add_argument("model")
    return p


def _workers(args, entries: dict[str, str] | None = None) -> str | None:
    if getattr(args, "workers", None) is not None:
        return str(args.workers)
    if entries and "workers" in entries:
        return entries["workers"]
    return os.environ.get("GPAE_WORKERS")


def _train_entries(args) -> dict[str, str]:
    """Merge settings: config file, then preset, then explicit flags."""
    entries = read_config_file(args.config) if args.config else {}
    if args.preset:
        entries.update(PRESETS[args.preset])
    for key in ("setup", "train", "test", "out", "seed", "generations", "batch", "passes", "limit", "test_limit"):
        value = getattr(args, key)
        if value is not None:
            entries[key] = str(value)
    workers = _workers(args, entries)
    if workers is not None:
        entries["workers"] = workers
    return entries


def _worker_count(args) -> int:
    raw = _workers(args)
    try:
        n = 1 if raw is None else int(raw)
    except ValueError:
        raise ConfigError(f"bad worker count {raw!r}") from None
    if n < 1:
        raise ConfigError("workers must be at least 1")
    return n


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(build_run_config(_train_entries(args)))
        if args.command == "transform":
            return cmd_transform(args.model, args.dataset, args.out, _worker_count(args), args.limit)
        if args.command == "reconstruct":
            return cmd_reconstruct(args.model, args.dataset, args.out, args.count, _worker_count(args))
        return cmd_inspect(args.model)
    except ConfigError as exc:
        print(f"gpae: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as exc:
        print(f"gpae: data format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"gpae: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
