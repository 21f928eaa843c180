"""Run logs, metrics CSVs, reconstruction strips and model files."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gpae.autoencoder import (
    AutoencoderIndividual,
    LayerTopology,
    TopologyKind,
    build_topology_partitioned,
    build_topology_straightforward,
    reconstruct,
)
from gpae.data import Dataset, DataFormatError, to_bytes, write_pgm
from gpae.tree import ParseError, parse_tree, serialize_tree

MODEL_MAGIC = "#gpae v1"


@dataclass
class GenerationRecord:
    generation: int
    best: float
    mean: float
    worst: float
    elapsed_ms: float = 0.0
    batch: int | None = None


@dataclass
class RunLog:
    """Per-generation fitness statistics plus a final summary.

    Record ``g`` describes population ``g`` on the set it was evaluated on
    (a minibatch, or the full training set); the last record is always the
    final population on the full training set.
    """

    records: list[GenerationRecord] = field(default_factory=list)
    train_mse: float | None = None
    test_mse: float | None = None
    total_seconds: float | None = None


_COLUMNS = ["record", "generation", "batch", "best", "mean", "worst", "train_mse", "test_mse"]


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def write_metrics_csv(log: RunLog, path, timing: bool = False) -> None:
    """Write one row per generation and a summary row.

    Wall-clock columns are opt-in so that the default file is a pure
    function of seed, config and data.
    """
    if not log.records:
        raise ValueError("refusing to write metrics for an empty run log")
    for i, rec in enumerate(log.records):
        if rec.generation != i:
            raise ValueError(f"record {i} has generation {rec.generation}; indices must be contiguous")
    header = _COLUMNS + (["elapsed_ms"] if timing else [])
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for rec in log.records:
            row = ["generation", rec.generation, "" if rec.batch is None else rec.batch,
                   _num(rec.best), _num(rec.mean), _num(rec.worst), "", ""]
            if timing:
                row.append(_num(rec.elapsed_ms))
            w.writerow(row)
        row = ["summary", "", "", "", "", "", _num(log.train_mse), _num(log.test_mse)]
        if timing:
            row.append(_num(None if log.total_seconds is None else log.total_seconds * 1000.0))
        w.writerow(row)


def read_metrics_csv(path) -> RunLog:
    def opt(s):
        return None if s == "" else float(s)

    log = RunLog()
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            if row["record"] == "generation":
                log.records.append(GenerationRecord(
                    int(row["generation"]), float(row["best"]), float(row["mean"]),
                    float(row["worst"]), opt(row.get("elapsed_ms", "")) or 0.0,
                    None if row["batch"] == "" else int(row["batch"]),
                ))
            elif row["record"] == "summary":
                log.train_mse = opt(row["train_mse"])
                log.test_mse = opt(row["test_mse"])
                ms = opt(row.get("elapsed_ms", ""))
                log.total_seconds = None if ms is None else ms / 1000.0
    return log


def write_reconstruction_strip(model: AutoencoderIndividual, data: Dataset, path,
                               count: int = 10, workers: int = 1) -> None:
    """PGM with the originals on top and their reconstructions underneath."""
    if data.n_features != model.n_in:
        raise ValueError(
            f"dataset has {data.n_features} features but the model reconstructs {model.n_in}"
        )
    count = min(count, data.count)
    if count < 1:
        raise ValueError("need at least one sample for a reconstruction strip")
    originals = data.samples[:count]
    recon = reconstruct(model, originals, workers)
    h, w = data.height, data.width
    strip = np.zeros((2 * h, count * w), dtype=np.uint8)
    for row, values in enumerate((originals, recon)):
        cells = to_bytes(values).reshape(count, h, w)
        for k in range(count):
            strip[row * h:(row + 1) * h, k * w:(k + 1) * w] = cells[k]
    write_pgm(path, strip)


# -- model files ----------------------------------------------------------------


class ModelFormatError(DataFormatError):
    pass


@dataclass
class Model:
    individual: AutoencoderIndividual
    topology: LayerTopology
    header: dict[str, str]


def _topology_from_header(kind: str, n_in: int, n_code: int) -> LayerTopology:
    if kind == TopologyKind.PARTITIONED.value:
        topo = build_topology_partitioned(n_in)
        if topo.n_code != n_code:
            raise ModelFormatError(f"partitioned n_in={n_in} implies n_code={topo.n_code}, header says {n_code}")
        return topo
    if kind == TopologyKind.STRAIGHTFORWARD.value:
        return build_topology_straightforward(n_in, n_code)
    raise ModelFormatError(f"unknown topology kind {kind!r}")


def save_model(path, individual: AutoencoderIndividual, topology: LayerTopology,
               meta: dict | None = None) -> None:
    """Write a model file; ``meta`` entries (geometry, seed, config) go in the header."""
    lines = [
        MODEL_MAGIC,
        f"kind={topology.kind.value}",
        f"n_in={topology.n_in}",
        f"n_code={topology.n_code}",
    ]
    for key in sorted(meta or {}):
        if key in ("kind", "n_in", "n_code") or "=" in key or "\n" in str(meta[key]):
            raise ValueError(f"bad header entry {key!r}")
        lines.append(f"{key}={meta[key]}")
    lines.extend(f"enc:{j} {serialize_tree(t)}" for j, t in enumerate(individual.encoder))
    lines.extend(f"dec:{i} {serialize_tree(t)}" for i, t in enumerate(individual.decoder))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> Model:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != MODEL_MAGIC:
        found = lines[0].strip() if lines else "<empty file>"
        raise ModelFormatError(f"{path}: line 1: expected {MODEL_MAGIC!r}, found {found!r}")
    header: dict[str, str] = {}
    lineno = 1
    for lineno, line in enumerate(lines[1:], start=2):
        if line.startswith(("enc:", "dec:")):
            lineno -= 1
            break
        if "=" not in line:
            raise ModelFormatError(f"{path}: line {lineno}: expected key=value, found {line!r}")
        key, value = line.split("=", 1)
        header[key.strip()] = value.strip()
    else:
        lineno = len(lines)
    try:
        kind = header["kind"]
        n_in, n_code = int(header["n_in"]), int(header["n_code"])
        max_depth = int(header.get("max_depth", 4))
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"{path}: incomplete or malformed header ({exc})") from None
    topology = _topology_from_header(kind, n_in, n_code)

    body = lines[lineno:]
    expected = n_code + n_in
    if len(body) != expected:
        raise ModelFormatError(f"{path}: expected {expected} trees ({n_code} enc + {n_in} dec), found {len(body)}")
    encoder, decoder = [], []
    for offset, line in enumerate(body):
        no = lineno + offset + 1
        if offset < n_code:
            role, slot, scope, out = "enc", offset, topology.encoder_scopes[offset], encoder
        else:
            slot = offset - n_code
            role, scope, out = "dec", topology.decoder_scopes[slot], decoder
        tag, _, text = line.partition(" ")
        if tag != f"{role}:{slot}":
            raise ModelFormatError(f"{path}: line {no}: expected {role}:{slot}, found {tag!r}")
        try:
            out.append(parse_tree(text, scope, max_depth, line=no))
        except ParseError as exc:
            raise ModelFormatError(f"{path}: {exc}") from None
    return Model(AutoencoderIndividual(tuple(encoder), tuple(decoder)), topology, header)
