"""Generational evolution of forest autoencoders.

One generation keeps half the population through binary tournaments, breeds
crossover and mutation children from those survivors, and re-inserts the
best few individuals of the previous generation unchanged. The partitioned
setup runs one such population per 4-feature block; blocks never exchange
material and share only the minibatch schedule.

Randomness is drawn from streams keyed on (seed, purpose, block, generation),
so results do not depend on how evaluation work is spread over threads.
"""

from __future__ import annotations

import logging
import math
import random
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from gpae import vm
from gpae.artifacts import GenerationRecord, RunLog
from gpae.autoencoder import (
    BLOCK_IN,
    MINI_TOPOLOGY,
    AutoencoderIndividual,
    ConfigError,
    LayerTopology,
    TopologyKind,
    assemble,
    build_topology_partitioned,
    build_topology_straightforward,
    random_individual,
)
from gpae.data import Dataset
from gpae.fitness import mean_mse_over
from gpae.tree import random_tree

log = logging.getLogger(__name__)

_INIT, _STEP, _SCHEDULE = 0, 1, 2
#: Upper bound on float64 cells per intermediate evaluation buffer.
_EVAL_BUDGET = 1 << 23


def stream(seed: int, *key: int) -> random.Random:
    """Independent generator for one (purpose, block, generation, ...) key."""
    state = np.random.SeedSequence([seed, *key]).generate_state(4, dtype=np.uint64)
    return random.Random(int.from_bytes(state.tobytes(), "little"))


@dataclass
class EvolutionConfig:
    population_size: int = 60
    max_depth: int = 4
    crossover_prob: float = 0.6
    mutation_prob: float = 0.3
    elitism_count: int = 3
    generations: int | None = None
    minibatch_size: int | None = None
    passes: int = 1
    seed: int = 0
    setup: TopologyKind = TopologyKind.PARTITIONED
    parallel_workers: int = 1
    #: straightforward only; defaults to ceil(3/4 n_in)
    n_code: int | None = None
    #: trees exchanged per forest by one crossover
    crossover_swaps: int = 1

    def __post_init__(self):
        if isinstance(self.setup, str):
            self.setup = TopologyKind(self.setup)

    def counts(self) -> tuple[int, int, int, int]:
        """(survivors, crossover children, mutation children, elites) per generation."""
        survivors = self.population_size // 2
        crossed = math.floor(survivors * self.crossover_prob + 0.5)
        mutated = math.floor(survivors * self.mutation_prob + 0.5)
        return survivors, crossed, mutated, self.elitism_count

    def validate(self) -> None:
        if self.population_size < 2:
            raise ConfigError("population_size must be at least 2")
        if self.max_depth < 0:
            raise ConfigError("max_depth must be non-negative")
        for name in ("crossover_prob", "mutation_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        if self.crossover_prob + self.mutation_prob > 1.0:
            raise ConfigError("crossover_prob + mutation_prob must not exceed 1")
        if self.elitism_count < 0:
            raise ConfigError("elitism_count must be non-negative")
        counts = self.counts()
        if sum(counts) != self.population_size:
            raise ConfigError(
                f"survivors/crossover/mutation/elites {counts} sum to {sum(counts)}, "
                f"not population_size {self.population_size}"
            )
        if self.generations is not None and self.generations < 0:
            raise ConfigError("generations must be non-negative")
        if self.minibatch_size is not None and self.minibatch_size <= 0:
            raise ConfigError("minibatch size must be positive")
        if self.passes < 1:
            raise ConfigError("passes must be at least 1")
        if self.parallel_workers < 1:
            raise ConfigError("parallel_workers must be at least 1")
        if self.crossover_swaps < 1:
            raise ConfigError("crossover_swaps must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a non-negative 64-bit integer")

    def resolve_generations(self, train_size: int) -> int:
        if self.generations is not None:
            return self.generations
        if self.minibatch_size is not None:
            return self.passes * math.ceil(train_size / self.minibatch_size)
        return 40

    def echo(self) -> dict[str, str]:
        """Settings that determine a run, for model headers (no worker count)."""
        return {
            "population_size": str(self.population_size),
            "max_depth": str(self.max_depth),
            "crossover_prob": repr(self.crossover_prob),
            "mutation_prob": repr(self.mutation_prob),
            "elitism_count": str(self.elitism_count),
            "generations": "" if self.generations is None else str(self.generations),
            "minibatch_size": "" if self.minibatch_size is None else str(self.minibatch_size),
            "passes": str(self.passes),
            "seed": str(self.seed),
            "setup": self.setup.value,
            "crossover_swaps": str(self.crossover_swaps),
        }


@dataclass
class Population:
    individuals: list[AutoencoderIndividual]
    generation: int = 0


@dataclass
class MinibatchSchedule:
    batch_size: int
    passes: int
    batches: list[np.ndarray] = field(default_factory=list)

    @property
    def generations(self) -> int:
        return len(self.batches)


def make_schedule(train_size: int, batch_size: int, passes: int, rng: random.Random) -> MinibatchSchedule:
    """Per pass, shuffle the training indices and cut them into consecutive batches."""
    if batch_size <= 0:
        raise ConfigError("batch size must be positive")
    if batch_size > train_size:
        raise ConfigError(f"batch size {batch_size} exceeds training set size {train_size}")
    batches = []
    for _ in range(passes):
        order = list(range(train_size))
        rng.shuffle(order)
        order = np.array(order, dtype=np.int64)
        batches.extend(order[i:i + batch_size] for i in range(0, train_size, batch_size))
    return MinibatchSchedule(batch_size, passes, batches)


# -- fitness --------------------------------------------------------------------


def _evaluate(inds: Sequence[AutoencoderIndividual], offsets: Sequence[int], Xt: np.ndarray,
              workers: int) -> np.ndarray:
    """Mean reconstruction MSE of each individual on feature-major data ``Xt``.

    Individual ``k`` reads input rows shifted by ``offsets[k]`` and is scored
    against the ``n_in`` rows starting there. All individuals share one shape.
    """
    n_samples = Xt.shape[1]
    n_code, n_in = inds[0].n_code, inds[0].n_in
    chunk = max(1, _EVAL_BUDGET // ((n_code + 1) * n_samples))
    out = np.empty(len(inds))
    for lo in range(0, len(inds), chunk):
        part = inds[lo:lo + chunk]
        offs = np.asarray(offsets[lo:lo + chunk], dtype=np.int64)
        codes = vm.run([(ind.encoder, off) for ind, off in zip(part, offs)], Xt, workers)
        sq = vm.squared_error(
            [(ind.decoder, k * n_code, off) for k, (ind, off) in enumerate(zip(part, offs))],
            codes, Xt, workers,
        )
        out[lo:lo + len(part)] = (sq / n_in).mean(axis=1)
    return out


def _assign(pops: Sequence[list[AutoencoderIndividual]], offsets: Sequence[int], Xt: np.ndarray,
            workers: int) -> None:
    """Evaluate every individual whose fitness is unset (each distinct object once)."""
    todo, offs, seen = [], [], set()
    for pop, off in zip(pops, offsets):
        for ind in pop:
            if ind.fitness is None and id(ind) not in seen:
                seen.add(id(ind))
                todo.append(ind)
                offs.append(off)
    if not todo:
        return
    for ind, f in zip(todo, _evaluate(todo, offs, Xt, workers)):
        ind.fitness = float(f)


def assign_fitness(pop: Population, samples: np.ndarray, workers: int = 1) -> Population:
    """Set every individual's fitness to its mean MSE over ``samples`` (count x n_in)."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError("need a non-empty count x features sample matrix")
    for ind in pop.individuals:
        ind.fitness = None
    _assign([pop.individuals], [0], np.ascontiguousarray(samples.T), workers)
    return pop


# -- operators ------------------------------------------------------------------


def _pick(rng: random.Random, n: int) -> int:
    """Uniform index in ``range(n)``; one float draw, cheaper than ``randrange``."""
    return int(rng.random() * n)


def _pair(rng: random.Random, n: int) -> tuple[int, int]:
    """Two distinct uniform indices in ``range(n)``, ``n >= 2``."""
    i = int(rng.random() * n)
    j = int(rng.random() * (n - 1))
    return i, j + (j >= i)


def binary_tournament_survivors(individuals: Sequence[AutoencoderIndividual], rng: random.Random,
                                count: int | None = None) -> list[AutoencoderIndividual]:
    """Run ``count`` (default half the population) independent two-way tournaments.

    Each draws two distinct individuals uniformly; the lower fitness wins and
    ties are settled by a fair coin. An individual may win several times.
    """
    size = len(individuals)
    count = size // 2 if count is None else count
    if any(ind.fitness is None for ind in individuals):
        raise ValueError("tournament selection needs every fitness assigned")
    if size == 1:
        return [individuals[0]] * count
    winners = []
    for _ in range(count):
        i, j = _pair(rng, size)
        a, b = individuals[i], individuals[j]
        if a.fitness == b.fitness:
            winners.append(a if rng.random() < 0.5 else b)
        else:
            winners.append(a if a.fitness < b.fitness else b)
    return winners


def _same_shape(a: AutoencoderIndividual, b: AutoencoderIndividual) -> bool:
    return (
        len(a.encoder) == len(b.encoder)
        and len(a.decoder) == len(b.decoder)
        and all(x.visible_features == y.visible_features for x, y in zip(a.encoder, b.encoder))
        and all(x.visible_features == y.visible_features for x, y in zip(a.decoder, b.decoder))
    )


def _slots(rng: random.Random, n: int, k: int) -> list[int]:
    if k == 1:
        return [_pick(rng, n)]
    return rng.sample(range(n), min(k, n))


def crossover(a: AutoencoderIndividual, b: AutoencoderIndividual, rng: random.Random,
              swaps: int = 1) -> tuple[AutoencoderIndividual, AutoencoderIndividual]:
    """Exchange ``swaps`` same-slot encoder trees, then ``swaps`` decoder trees."""
    if not _same_shape(a, b):
        raise ValueError("crossover parents must share one topology")
    enc_a, enc_b = list(a.encoder), list(b.encoder)
    dec_a, dec_b = list(a.decoder), list(b.decoder)
    for j in _slots(rng, len(enc_a), swaps):
        enc_a[j], enc_b[j] = enc_b[j], enc_a[j]
    for i in _slots(rng, len(dec_a), swaps):
        dec_a[i], dec_b[i] = dec_b[i], dec_a[i]
    return (
        AutoencoderIndividual(tuple(enc_a), tuple(dec_a)),
        AutoencoderIndividual(tuple(enc_b), tuple(dec_b)),
    )


def mutate(a: AutoencoderIndividual, rng: random.Random, max_depth: int = 4) -> AutoencoderIndividual:
    """Replace one random encoder tree and one random decoder tree with fresh ones."""
    enc, dec = list(a.encoder), list(a.decoder)
    j = _pick(rng, len(enc))
    enc[j] = random_tree(enc[j].visible_features, max_depth, rng)
    i = _pick(rng, len(dec))
    dec[i] = random_tree(dec[i].visible_features, max_depth, rng)
    return AutoencoderIndividual(tuple(enc), tuple(dec))


def elites(individuals: Sequence[AutoencoderIndividual], count: int) -> list[AutoencoderIndividual]:
    """The ``count`` lowest-fitness individuals; ties go to the lower index."""
    order = sorted(range(len(individuals)), key=lambda k: (individuals[k].fitness, k))
    return [individuals[k] for k in order[:count]]


def generation_step(pop: Population, config: EvolutionConfig, rng: random.Random) -> Population:
    """Build the next population from an evaluated one.

    Survivors and elites keep their (still valid) fitness; children start
    unevaluated.
    """
    n_surv, n_cross, n_mut, n_elite = config.counts()
    current = pop.individuals
    survivors = binary_tournament_survivors(current, rng, n_surv)

    children: list[AutoencoderIndividual] = []
    for _ in range(math.ceil(n_cross / 2)):
        if len(survivors) > 1:
            i, j = _pair(rng, len(survivors))
        else:
            i = j = 0
        pair = list(crossover(survivors[i], survivors[j], rng, config.crossover_swaps))
        if len(children) + 2 > n_cross:
            pair = [pair[_pick(rng, 2)]]
        children.extend(pair)

    mutants = [
        mutate(survivors[_pick(rng, len(survivors))], rng, config.max_depth)
        for _ in range(n_mut)
    ]
    nxt = survivors + children + mutants + elites(current, n_elite)
    return Population(nxt, pop.generation + 1)


# -- runs -----------------------------------------------------------------------


class RunResult(NamedTuple):
    model: AutoencoderIndividual
    topology: LayerTopology
    log: RunLog


def _evolve(topology: LayerTopology, member_topology: LayerTopology, offsets: list[int],
            train: Dataset, config: EvolutionConfig) -> tuple[list[AutoencoderIndividual], RunLog]:
    """Evolve one population per entry of ``offsets``; return each one's best member."""
    config.validate()
    start = time.perf_counter()
    generations = config.resolve_generations(train.count)
    Xt = np.ascontiguousarray(train.samples.T)
    workers = config.parallel_workers

    schedule = None
    if config.minibatch_size is not None:
        per_pass = math.ceil(train.count / config.minibatch_size)
        passes = max(config.passes, math.ceil(generations / per_pass)) if generations else config.passes
        schedule = make_schedule(train.count, config.minibatch_size, passes, stream(config.seed, _SCHEDULE))

    pops = []
    for p in range(len(offsets)):
        rng = stream(config.seed, _INIT, p)
        pops.append(Population(
            [random_individual(member_topology, config.max_depth, rng) for _ in range(config.population_size)]
        ))

    runlog = RunLog()

    def record(g: int, batch: int | None, t0: float) -> None:
        fits = np.array([[ind.fitness for ind in pop.individuals] for pop in pops])
        runlog.records.append(GenerationRecord(
            g, float(fits.min(axis=1).mean()), float(fits.mean(axis=1).mean()),
            float(fits.max(axis=1).mean()), (time.perf_counter() - t0) * 1000.0, batch,
        ))
        log.debug("generation %d best %.6f", g, runlog.records[-1].best)

    for g in range(generations):
        t0 = time.perf_counter()
        if schedule is None:
            Xb, batch = Xt, None
        else:
            batch = g
            Xb = np.ascontiguousarray(Xt[:, schedule.batches[g]])
            for pop in pops:
                for ind in pop.individuals:
                    ind.fitness = None
        _assign([pop.individuals for pop in pops], offsets, Xb, workers)
        record(g, batch, t0)
        pops = [generation_step(pop, config, stream(config.seed, _STEP, p, g)) for p, pop in enumerate(pops)]

    t0 = time.perf_counter()
    if schedule is not None:
        for pop in pops:
            for ind in pop.individuals:
                ind.fitness = None
    _assign([pop.individuals for pop in pops], offsets, Xt, workers)
    record(generations, None, t0)

    best = [elites(pop.individuals, 1)[0] for pop in pops]
    runlog.total_seconds = time.perf_counter() - start
    return best, runlog


def _finish(model: AutoencoderIndividual, topology: LayerTopology, runlog: RunLog, train: Dataset,
            test: Dataset | None, workers: int, start: float) -> RunResult:
    model.fitness = mean_mse_over(train.samples, model, workers)
    runlog.train_mse = model.fitness
    if test is not None:
        runlog.test_mse = mean_mse_over(test.samples, model, workers)
    runlog.total_seconds = time.perf_counter() - start
    return RunResult(model, topology, runlog)


def evolve_straightforward(train: Dataset, config: EvolutionConfig, test: Dataset | None = None) -> RunResult:
    """Single population of full-width autoencoders (every tree sees every feature)."""
    start = time.perf_counter()
    topology = build_topology_straightforward(train.n_features, config.n_code)
    (best,), runlog = _evolve(topology, topology, [0], train, config)
    return _finish(best, topology, runlog, train, test, config.parallel_workers, start)


def evolve_partitioned(train: Dataset, config: EvolutionConfig, test: Dataset | None = None) -> RunResult:
    """Independent 4-3-4 populations per block, assembled from each block's best."""
    start = time.perf_counter()
    topology = build_topology_partitioned(train.n_features)
    offsets = [BLOCK_IN * b for b in range(topology.n_blocks)]
    minis, runlog = _evolve(topology, MINI_TOPOLOGY, offsets, train, config)
    return _finish(assemble(topology, minis), topology, runlog, train, test, config.parallel_workers, start)


def evolve(train: Dataset, config: EvolutionConfig, test: Dataset | None = None) -> RunResult:
    if TopologyKind(config.setup) is TopologyKind.PARTITIONED:
        return evolve_partitioned(train, config, test)
    return evolve_straightforward(train, config, test)
