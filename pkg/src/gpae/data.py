"""Grayscale image datasets as flat, row-major feature vectors in [0, 1]."""

from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX3_MAGIC = 0x00000803


class DataFormatError(ValueError):
    """Input bytes do not follow the expected file format."""


class BadMagicError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class DimensionMismatchError(DataFormatError):
    pass


@dataclass(frozen=True)
class Dataset:
    samples: np.ndarray
    width: int
    height: int
    name: str = ""

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] < 1:
            raise DataFormatError(f"need a non-empty count x features matrix, got shape {s.shape}")
        if s.shape[1] != self.width * self.height:
            raise DimensionMismatchError(
                f"{s.shape[1]} features do not match geometry {self.width}x{self.height}"
            )
        if s.size and (s.min() < 0.0 or s.max() > 1.0):
            raise DataFormatError("sample values must lie in [0, 1]")
        object.__setattr__(self, "samples", s)

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    @property
    def n_features(self) -> int:
        return self.samples.shape[1]

    def head(self, n: int | None) -> Dataset:
        if n is None or n >= self.count:
            return self
        if n < 1:
            raise ValueError("a dataset keeps at least one sample")
        return Dataset(self.samples[:n], self.width, self.height, self.name)


@dataclass(frozen=True)
class SplitSpec:
    train: Dataset
    test: Dataset

    def __post_init__(self):
        if (self.train.width, self.train.height) != (self.test.width, self.test.height):
            raise DimensionMismatchError(
                f"train geometry {self.train.width}x{self.train.height} differs from "
                f"test geometry {self.test.width}x{self.test.height}"
            )


def _read_bytes(path) -> bytes:
    path = os.fspath(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as f:
        return f.read()


def load_idx(images_path, count_limit: int | None = None) -> Dataset:
    """Load an IDX3 unsigned-byte image file (optionally gzip-compressed)."""
    raw = _read_bytes(images_path)
    if len(raw) < 4:
        raise TruncatedFileError(f"{images_path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic >> 8 != IDX3_MAGIC >> 8:
        raise BadMagicError(f"{images_path}: magic 0x{magic:08x} is not an unsigned-byte IDX file")
    if magic & 0xFF != 3:
        raise DimensionMismatchError(f"{images_path}: IDX file has {magic & 0xFF} dimensions, expected 3")
    if len(raw) < 16:
        raise TruncatedFileError(f"{images_path}: header ends after {len(raw)} bytes")
    count, rows, cols = struct.unpack(">III", raw[4:16])
    expected = 16 + count * rows * cols
    if len(raw) < expected:
        raise TruncatedFileError(f"{images_path}: expected {expected} bytes, found {len(raw)}")
    if len(raw) > expected:
        raise DimensionMismatchError(
            f"{images_path}: header declares {count}x{rows}x{cols} but {len(raw) - expected} extra bytes follow"
        )
    if count_limit is not None:
        count = min(count, count_limit)
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    return Dataset(pixels.reshape(count, rows * cols) / 255.0, cols, rows, Path(images_path).name)


def write_idx(path, images: np.ndarray) -> None:
    """Write ``count x rows x cols`` uint8 images as an IDX3 file."""
    images = np.asarray(images)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise ValueError("write_idx expects a uint8 array of shape (count, rows, cols)")
    header = struct.pack(">IIII", IDX3_MAGIC, *images.shape)
    path = os.fspath(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "wb") as f:
        f.write(header + images.tobytes())


def to_bytes(samples: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] values to 8-bit, clamping anything out of range."""
    return np.rint(np.clip(samples, 0.0, 1.0) * 255.0).astype(np.uint8)


# -- PGM ------------------------------------------------------------------------


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5, maxval 255) PGM into a ``height x width`` uint8 array."""
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedFileError(f"{path}: incomplete PGM header")
        fields.append(raw[start:pos])
    if fields[0] != b"P5":
        raise BadMagicError(f"{path}: not a binary PGM (magic {fields[0][:8]!r})")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise DataFormatError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise DataFormatError(f"{path}: maxval {maxval} unsupported, need 255")
    pos += 1  # single whitespace byte before the raster
    data = raw[pos : pos + width * height]
    if len(data) < width * height:
        raise TruncatedFileError(f"{path}: raster has {len(data)} of {width * height} bytes")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width)


def write_pgm(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise ValueError("write_pgm expects a 2-D uint8 array")
    height, width = pixels.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (width, height))
        f.write(pixels.tobytes())


def load_raster_dir(dir_path) -> Dataset:
    """Load every ``.pgm`` file in a directory, in lexicographic filename order."""
    dir_path = Path(dir_path)
    if not dir_path.is_dir():
        raise FileNotFoundError(f"{dir_path} is not a directory")
    entries = sorted(p for p in dir_path.iterdir() if p.is_file())
    if not entries:
        raise DataFormatError(f"{dir_path}: no images found")
    images = []
    for p in entries:
        if p.suffix.lower() != ".pgm":
            raise DataFormatError(f"{p}: not a .pgm file")
        img = read_pgm(p)
        if images and img.shape != images[0].shape:
            raise DimensionMismatchError(
                f"{p}: geometry {img.shape[1]}x{img.shape[0]} differs from "
                f"{images[0].shape[1]}x{images[0].shape[0]}"
            )
        images.append(img)
    stack = np.stack(images)
    height, width = stack.shape[1:]
    return Dataset(stack.reshape(len(images), -1) / 255.0, width, height, dir_path.name)


def load_dataset(path, count_limit: int | None = None) -> Dataset:
    """IDX file or PGM directory, chosen by what ``path`` is."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset path {path} does not exist")
    if path.is_dir():
        return load_raster_dir(path).head(count_limit)
    return load_idx(path, count_limit)


# -- synthetic fixtures ---------------------------------------------------------


def _geometry(n_features: int) -> tuple[int, int]:
    side = math.isqrt(n_features)
    if side * side == n_features:
        return side, side
    return n_features, 1


def synth_dataset(kind: str, count: int, n_features: int, seed: int, rank: int = 2) -> Dataset:
    """Deterministic synthetic data.

    ``uniform-noise``: i.i.d. uniform pixels. ``blockwise-constant``: each
    consecutive group of 4 features shares one uniform value, so a 4-3-4
    block can reconstruct it exactly. ``low-rank``: product of two
    non-negative factors of inner size ``rank``, scaled into [0, 1].
    """
    rng = np.random.default_rng(seed)
    if kind == "uniform-noise":
        x = rng.random((count, n_features))
    elif kind == "blockwise-constant":
        if n_features % 4:
            raise ValueError("blockwise-constant data needs n_features divisible by 4")
        x = np.repeat(rng.random((count, n_features // 4)), 4, axis=1)
    elif kind == "low-rank":
        x = rng.random((count, rank)) @ rng.random((rank, n_features)) / rank
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    width, height = _geometry(n_features)
    return Dataset(x, width, height, f"synth-{kind}")
