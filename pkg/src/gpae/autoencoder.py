"""Forest autoencoders: encoder trees write a code bus, decoder trees read it back.

Two wirings are supported. In the straightforward one every encoder tree may
read any input feature and every decoder tree any code feature. In the
partitioned one the input is cut into consecutive groups of four features,
each feeding three code features that are decoded back to those four only,
forming independent 4-3-4 mini-autoencoders.
"""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from gpae import vm
from gpae.tree import OP_FEATURE, ExprTree, eval_tree, random_tree

BLOCK_IN = 4
BLOCK_CODE = 3


class ConfigError(ValueError):
    """Invalid sizes or settings, detected before any work starts."""


class TopologyKind(enum.Enum):
    STRAIGHTFORWARD = "straightforward"
    PARTITIONED = "partitioned"


@dataclass(frozen=True)
class LayerTopology:
    kind: TopologyKind
    n_in: int
    n_code: int
    encoder_scopes: tuple[tuple[int, ...], ...]
    decoder_scopes: tuple[tuple[int, ...], ...]

    @property
    def n_blocks(self) -> int:
        if self.kind is not TopologyKind.PARTITIONED:
            raise ConfigError("only partitioned topologies have blocks")
        return self.n_in // BLOCK_IN

    def block(self, i: int) -> tuple[range, range]:
        """Input indices and code indices of block ``i``."""
        return (
            range(BLOCK_IN * i, BLOCK_IN * (i + 1)),
            range(BLOCK_CODE * i, BLOCK_CODE * (i + 1)),
        )


def build_topology_straightforward(n_in: int, n_code: int | None = None) -> LayerTopology:
    if n_code is None:
        n_code = math.ceil(3 * n_in / 4)
    if not 0 < n_code < n_in:
        raise ConfigError(f"need 0 < n_code < n_in, got n_code={n_code}, n_in={n_in}")
    inputs = tuple(range(n_in))
    codes = tuple(range(n_code))
    return LayerTopology(
        TopologyKind.STRAIGHTFORWARD, n_in, n_code, (inputs,) * n_code, (codes,) * n_in
    )


def build_topology_partitioned(n_in: int) -> LayerTopology:
    if n_in <= 0 or n_in % BLOCK_IN:
        raise ConfigError(
            f"partitioned topology needs n_in divisible by {BLOCK_IN}; "
            f"n_in={n_in} leaves remainder {n_in % BLOCK_IN if n_in > 0 else n_in}"
        )
    n_blocks = n_in // BLOCK_IN
    enc, dec = [], []
    for b in range(n_blocks):
        inputs = tuple(range(BLOCK_IN * b, BLOCK_IN * (b + 1)))
        codes = tuple(range(BLOCK_CODE * b, BLOCK_CODE * (b + 1)))
        enc.extend([inputs] * BLOCK_CODE)
        dec.extend([codes] * BLOCK_IN)
    return LayerTopology(
        TopologyKind.PARTITIONED, n_in, BLOCK_CODE * n_blocks, tuple(enc), tuple(dec)
    )


#: Wiring of a single mini-autoencoder with block-local indices.
MINI_TOPOLOGY = build_topology_partitioned(BLOCK_IN)


@dataclass(eq=False)
class AutoencoderIndividual:
    """Encoder forest + decoder forest, evolved as one indivisible unit.

    ``fitness`` is the mean reconstruction MSE on the last evaluation set,
    or ``None`` when unknown; genetic operators always return unevaluated
    individuals.
    """

    encoder: tuple[ExprTree, ...]
    decoder: tuple[ExprTree, ...]
    fitness: float | None = None

    @property
    def n_in(self) -> int:
        return len(self.decoder)

    @property
    def n_code(self) -> int:
        return len(self.encoder)

    def same_structure(self, other: AutoencoderIndividual) -> bool:
        return self.encoder == other.encoder and self.decoder == other.decoder

    def copy(self) -> AutoencoderIndividual:
        """Shallow copy; trees are immutable and shared."""
        return AutoencoderIndividual(self.encoder, self.decoder, self.fitness)


@dataclass(frozen=True)
class MiniAutoencoder:
    """One 4-3-4 block of a partitioned autoencoder, with block-local trees."""

    block: int
    input_subset: tuple[int, ...]
    code_subset: tuple[int, ...]
    individual: AutoencoderIndividual


def check_individual(ind: AutoencoderIndividual, topology: LayerTopology, max_depth: int = 4) -> None:
    """Raise ``AssertionError`` if ``ind`` breaks any forest/scope/depth invariant."""
    assert len(ind.encoder) == topology.n_code, "encoder forest size"
    assert len(ind.decoder) == topology.n_in, "decoder forest size"
    for forest, scopes in ((ind.encoder, topology.encoder_scopes), (ind.decoder, topology.decoder_scopes)):
        for tree, scope in zip(forest, scopes):
            assert tree.visible_features == scope, "tree scope differs from topology"
            assert tree.depth <= max_depth, "tree too deep"
            o, a, _ = tree.program
            used = set(a[o == OP_FEATURE].tolist())
            assert used <= set(scope), "tree reads outside its scope"


def random_individual(topology: LayerTopology, max_depth: int, rng: random.Random) -> AutoencoderIndividual:
    encoder = tuple(random_tree(s, max_depth, rng) for s in topology.encoder_scopes)
    decoder = tuple(random_tree(s, max_depth, rng) for s in topology.decoder_scopes)
    return AutoencoderIndividual(encoder, decoder)


# -- single-sample reference path -------------------------------------------


def _forest(trees: Sequence[ExprTree], x: Sequence[float], width: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (width,):
        raise ValueError(f"expected a vector of length {width}, got shape {x.shape}")
    return np.array([eval_tree(t, x[list(t.visible_features)]) for t in trees])


def encode(ind: AutoencoderIndividual, sample: Sequence[float]) -> np.ndarray:
    return _forest(ind.encoder, sample, ind.n_in)


def decode(ind: AutoencoderIndividual, code: Sequence[float]) -> np.ndarray:
    return _forest(ind.decoder, code, ind.n_code)


# -- batched path -------------------------------------------------------------


def encode_batch(ind: AutoencoderIndividual, samples: np.ndarray, workers: int = 1) -> np.ndarray:
    """Codes for a ``count x n_in`` sample matrix, as ``count x n_code``."""
    samples = np.asarray(samples, dtype=np.float64)
    return vm.run([(ind.encoder, 0)], samples.T, workers).T


def decode_batch(ind: AutoencoderIndividual, codes: np.ndarray, workers: int = 1) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.float64)
    return vm.run([(ind.decoder, 0)], codes.T, workers).T


def reconstruct(ind: AutoencoderIndividual, samples: np.ndarray, workers: int = 1) -> np.ndarray:
    return decode_batch(ind, encode_batch(ind, samples, workers), workers)


@dataclass(frozen=True)
class Encoder:
    """Encoder half of a trained autoencoder, used as a feature extractor."""

    trees: tuple[ExprTree, ...]
    n_in: int

    @property
    def n_code(self) -> int:
        return len(self.trees)

    def transform(self, samples: np.ndarray, workers: int = 1) -> np.ndarray:
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[1] != self.n_in:
            raise ValueError(f"encoder expects {self.n_in} features, got shape {samples.shape}")
        return vm.run([(self.trees, 0)], samples.T, workers).T


def split_encoder(ind: AutoencoderIndividual, topology: LayerTopology) -> Encoder:
    return Encoder(tuple(ind.encoder), topology.n_in)


# -- partitioned assembly -----------------------------------------------------


def assemble(topology: LayerTopology, minis: Sequence[AutoencoderIndividual]) -> AutoencoderIndividual:
    """Join per-block mini-autoencoders into one individual over ``topology``."""
    if topology.kind is not TopologyKind.PARTITIONED or len(minis) != topology.n_blocks:
        raise ConfigError("need one mini-autoencoder per block of a partitioned topology")
    encoder: list[ExprTree] = []
    decoder: list[ExprTree] = []
    for mini in minis:
        j0, i0 = len(encoder), len(decoder)
        encoder.extend(t.rescoped(topology.encoder_scopes[j0 + k]) for k, t in enumerate(mini.encoder))
        decoder.extend(t.rescoped(topology.decoder_scopes[i0 + k]) for k, t in enumerate(mini.decoder))
    return AutoencoderIndividual(tuple(encoder), tuple(decoder))


def split_blocks(topology: LayerTopology, ind: AutoencoderIndividual) -> list[MiniAutoencoder]:
    """Inverse of :func:`assemble`: block-local mini-autoencoders."""
    minis = []
    for b in range(topology.n_blocks):
        inputs, codes = topology.block(b)
        enc = tuple(ind.encoder[j].rescoped(MINI_TOPOLOGY.encoder_scopes[k]) for k, j in enumerate(codes))
        dec = tuple(ind.decoder[i].rescoped(MINI_TOPOLOGY.decoder_scopes[k]) for k, i in enumerate(inputs))
        minis.append(MiniAutoencoder(b, tuple(inputs), tuple(codes), AutoencoderIndividual(enc, dec)))
    return minis


def search_space_log2(m: int, K: int, n: int) -> float:
    """log2 of ``m * K**n``, the size of the single-step search space."""
    if m <= 0 or K <= 0 or n < 0:
        raise ValueError("m and K must be positive and n non-negative")
    return math.log2(m) + n * math.log2(K)
