"""Generational GA over CNN genomes.

Each generation: evaluate every genome (short training, validation CCE),
select half the population as parents by size-3 tournaments among the top
``truncation_proportion`` fraction, breed as many offspring by crossover and
mutation, and continue with parents + offspring.

Determinism: the GA's own decisions come from one PCG64 stream seeded by
``master_seed``; every network trained in generation ``g`` uses a seed derived
from ``(master_seed, g)`` alone, so scheduling across workers cannot change
results.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from multiprocessing import get_context
from typing import Callable, Optional

import numpy as np

from . import engine
from .genome import (
    CROSSOVERS,
    Genome,
    InexpressibleGenome,
    express,
    genome_from_dict,
    genome_to_dict,
    mutate,
    random_genome,
    serialize_genome,
)

log = logging.getLogger(__name__)

WORST_FITNESS = math.inf
CHECKPOINT_MAGIC = "NASCTY-CHECKPOINT"
CHECKPOINT_VERSION = 1


@dataclass
class EvolutionConfig:
    population_size: int = 52
    max_generations: int = 10
    tournament_size: int = 3
    truncation_proportion: float = 1.0
    crossover_kind: str = "one_point"
    eta: float = 20.0
    train_epochs: int = 10
    batch_size: int = 100
    learning_rate: float = 1e-3
    master_seed: int = 0
    parallel_workers: int = 1

    def validate(self):
        if self.population_size < 2 or self.population_size % 2:
            raise ValueError(f"population_size must be even and >= 2, got {self.population_size}")
        if self.max_generations < 1:
            raise ValueError("max_generations must be positive")
        if not 0 < self.truncation_proportion <= 1:
            raise ValueError("truncation_proportion must lie in (0, 1]")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be positive")
        if self.tournament_size > self.pool_size():
            raise ValueError(
                f"tournament_size {self.tournament_size} exceeds the selection pool of {self.pool_size()}"
            )
        if self.crossover_kind not in CROSSOVERS:
            raise ValueError(f"crossover_kind must be one of {sorted(CROSSOVERS)}")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        for name in ("train_epochs", "batch_size", "parallel_workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        return self

    def pool_size(self):
        return math.ceil(self.truncation_proportion * self.population_size)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config field(s): {unknown}")
        return cls(**d)


@dataclass
class GenerationRecord:
    generation: int
    fitness: list
    best_genome: Genome
    best_fitness: float
    best_so_far: float
    duration: float
    rng_digest: str

    @property
    def mean_fitness(self):
        finite = [f for f in self.fitness if math.isfinite(f)]
        return sum(finite) / len(finite) if finite else WORST_FITNESS


@dataclass
class RunState:
    config: EvolutionConfig
    generation: int  # index of the next generation to evaluate
    population: list
    rng_state: dict
    records: list = field(default_factory=list)
    best_genome: Optional[Genome] = None
    best_fitness: float = WORST_FITNESS
    population_diversity: list = field(default_factory=list)


def generation_seed(master_seed, generation):
    ss = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(generation)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def rng_digest(rng):
    blob = json.dumps(rng.bit_generator.state, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ------------------------------------------------------------------ fitness

def evaluate_fitness(g: Genome, train_set, valid_set, cfg: EvolutionConfig, seed: int) -> float:
    """Validation CCE after ``cfg.train_epochs`` epochs; WORST_FITNESS when untrainable."""
    try:
        specs = express(g, train_set.n_samples)
    except InexpressibleGenome as exc:
        log.debug("inexpressible genome %s: %s", serialize_genome(g), exc)
        return WORST_FITNESS
    try:
        net = engine.Network(specs, train_set.n_samples, seed=seed)
        engine.train(net, train_set.traces, train_set.labels, cfg.train_epochs, cfg.batch_size,
                     cfg.learning_rate, seed)
        loss = engine.evaluate_loss(net, valid_set.traces, valid_set.labels)
    except (MemoryError, FloatingPointError, engine.ShapeError) as exc:
        log.warning("training failed for %s: %s", serialize_genome(g), exc)
        return WORST_FITNESS
    return loss if math.isfinite(loss) else WORST_FITNESS


class TrainingFitness:
    """Picklable fitness callable bound to the profiling data."""

    def __init__(self, train_set, valid_set, cfg):
        self.train_set, self.valid_set, self.cfg = train_set, valid_set, cfg

    def __call__(self, g, seed):
        return evaluate_fitness(g, self.train_set, self.valid_set, self.cfg, seed)


def _single_thread_blas():
    from threadpoolctl import threadpool_limits

    return threadpool_limits(1)


_worker_fitness = None


def _init_worker(fn):
    global _worker_fitness
    _worker_fitness = fn


def _worker_eval(payload):
    genome_text, seed = payload
    from .genome import parse_genome

    with _single_thread_blas():
        return _worker_fitness(parse_genome(genome_text), seed)


class PopulationEvaluator:
    """Evaluates unique genomes once per generation, optionally across processes."""

    def __init__(self, fitness_fn, workers=1):
        self.fitness_fn = fitness_fn
        self.workers = workers
        self._pool = None

    def __enter__(self):
        if self.workers > 1:
            self._pool = ProcessPoolExecutor(self.workers, mp_context=get_context("fork"),
                                             initializer=_init_worker, initargs=(self.fitness_fn,))
        return self

    def __exit__(self, *exc):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __call__(self, population, seed):
        keys = [serialize_genome(g) for g in population]
        unique = list(dict.fromkeys(keys))
        if self._pool is not None:
            values = list(self._pool.map(_worker_eval, [(k, seed) for k in unique]))
        else:
            by_key = {k: g for k, g in zip(keys, population)}
            with _single_thread_blas():
                values = [self.fitness_fn(by_key[k], seed) for k in unique]
        table = dict(zip(unique, values))
        return [float(table[k]) for k in keys]


# ---------------------------------------------------------------- selection

def rank_order(population, fitness):
    """Indices sorted by fitness, then genome text, then position."""
    keys = [serialize_genome(g) for g in population]
    return sorted(range(len(population)), key=lambda i: (fitness[i], keys[i], i))


def select_parents(population, fitness, cfg: EvolutionConfig, rng, return_indices=False):
    order = rank_order(population, fitness)
    pool = order[:cfg.pool_size()]
    chosen = []
    for _ in range(len(population) // 2):
        # pool is sorted best-first, so the lowest drawn rank wins the tournament
        picks = rng.integers(0, len(pool), cfg.tournament_size)
        chosen.append(pool[int(picks.min())])
    parents = [population[i] for i in chosen]
    return (parents, chosen) if return_indices else parents


def produce_offspring(parents, cfg: EvolutionConfig, rng, crossover=None, mutation=None):
    """Pair parents by a random perfect matching; each pair yields two mutated children."""
    crossover = crossover or CROSSOVERS[cfg.crossover_kind]
    mutation = mutation or mutate
    perm = [int(i) for i in rng.permutation(len(parents))]
    pairs = [(perm[i], perm[i + 1]) for i in range(0, len(perm) - 1, 2)]
    if len(perm) % 2:
        # odd parent count: the leftover mates with a random partner and keeps one child
        # (a single parent mates with itself)
        mate = perm[int(rng.integers(len(perm) - 1))] if len(perm) > 1 else perm[-1]
        pairs.append((perm[-1], mate))
    offspring = []
    for i, j in pairs:
        for child in crossover(parents[i], parents[j], rng):
            offspring.append(mutation(child, cfg.eta, rng))
    return offspring[:len(parents)]


def layer_count_diversity(population):
    """Mean pairwise |Δ conv blocks| + |Δ dense layers| over all genome pairs."""
    counts = np.array([(len(g.conv_blocks), len(g.dense_layers)) for g in population], dtype=np.int64)
    n = len(counts)
    if n < 2:
        return 0.0
    d = np.abs(counts[:, None, :] - counts[None, :, :]).sum(axis=2)
    return float(d[np.triu_indices(n, 1)].mean())


# --------------------------------------------------------------------- run

def initial_state(cfg: EvolutionConfig) -> RunState:
    cfg.validate()
    rng = np.random.default_rng(cfg.master_seed & (2**64 - 1))
    population = [random_genome(rng) for _ in range(cfg.population_size)]
    return RunState(cfg, 0, population, rng.bit_generator.state)


def _rng_from_state(state):
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


def step(state: RunState, evaluator) -> GenerationRecord:
    """Evaluate, record, select and breed one generation; mutates ``state`` in place."""
    cfg = state.config
    t0 = time.perf_counter()
    gen = state.generation
    pop = state.population
    fitness = evaluator(pop, generation_seed(cfg.master_seed, gen))

    best_i = rank_order(pop, fitness)[0]
    if fitness[best_i] < state.best_fitness or state.best_genome is None:
        state.best_fitness, state.best_genome = fitness[best_i], pop[best_i]

    rng = _rng_from_state(state.rng_state)
    record = GenerationRecord(
        generation=gen,
        fitness=list(fitness),
        best_genome=pop[best_i],
        best_fitness=fitness[best_i],
        best_so_far=state.best_fitness,
        duration=0.0,
        rng_digest=rng_digest(rng),
    )
    parents = select_parents(pop, fitness, cfg, rng)
    offspring = produce_offspring(parents, cfg, rng)

    state.population_diversity.append(layer_count_diversity(pop))
    state.population = list(parents) + list(offspring)
    state.rng_state = rng.bit_generator.state
    state.generation = gen + 1
    record.duration = time.perf_counter() - t0
    state.records.append(record)
    return record


def run(cfg: EvolutionConfig, train_set=None, valid_set=None, *, fitness_fn: Optional[Callable] = None,
        state: Optional[RunState] = None, out_dir=None, stop_after: Optional[int] = None,
        on_generation: Optional[Callable] = None) -> RunState:
    """Run (or continue) the GA until ``cfg.max_generations`` generations are done.

    ``fitness_fn(genome, seed) -> float`` replaces the training fitness when
    given. With ``out_dir`` a checkpoint and the generation logs are rewritten
    after every generation. ``stop_after`` ends the call once that many
    generations are complete, leaving a resumable checkpoint.
    """
    if state is None:
        state = initial_state(cfg)
        if out_dir is not None:
            _write_outputs(state, out_dir)
    cfg = state.config = cfg if cfg is not None else state.config
    cfg.validate()
    if fitness_fn is None:
        if train_set is None or valid_set is None:
            raise ValueError("train_set and valid_set are required for the training fitness")
        fitness_fn = TrainingFitness(train_set, valid_set, cfg)
    workers = int(os.environ.get("NASCTY_WORKERS", cfg.parallel_workers))

    with PopulationEvaluator(fitness_fn, workers) as evaluator:
        while state.generation < cfg.max_generations:
            if stop_after is not None and state.generation >= stop_after:
                break
            record = step(state, evaluator)
            log.info("generation %d: best %.5f, best so far %.5f (%.1fs)", record.generation,
                     record.best_fitness, record.best_so_far, record.duration)
            if out_dir is not None:
                _write_outputs(state, out_dir)
            if on_generation is not None:
                on_generation(state, record)
    return state


# -------------------------------------------------------------------- files

GENERATION_CSV = "generations.csv"
TIMING_CSV = "timings.csv"
CHECKPOINT_FILE = "checkpoint.json"
BEST_GENOME_FILE = "best_genome.json"
GENERATION_COLUMNS = ("generation", "best_fitness", "best_so_far", "mean_fitness", "diversity", "n_inexpressible")


def _fmt(x):
    return repr(float(x)) if math.isfinite(x) else "inf"


def generation_csv(state: RunState) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GENERATION_COLUMNS)
    for rec, div in zip(state.records, state.population_diversity):
        w.writerow([rec.generation, _fmt(rec.best_fitness), _fmt(rec.best_so_far), _fmt(rec.mean_fitness),
                    _fmt(div), sum(1 for f in rec.fitness if not math.isfinite(f))])
    return buf.getvalue()


def timing_csv(state: RunState) -> str:
    lines = ["generation,duration_s"] + [f"{r.generation},{r.duration:.3f}" for r in state.records]
    return "\n".join(lines) + "\n"


def _atomic_write(path, data):
    tmp = f"{path}.tmp"
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _write_outputs(state, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    checkpoint(state, os.path.join(out_dir, CHECKPOINT_FILE))
    _atomic_write(os.path.join(out_dir, GENERATION_CSV), generation_csv(state))
    _atomic_write(os.path.join(out_dir, TIMING_CSV), timing_csv(state))
    if state.best_genome is not None:
        _atomic_write(os.path.join(out_dir, BEST_GENOME_FILE),
                      json.dumps(genome_to_dict(state.best_genome), indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------- checkpoint

class CheckpointError(Exception):
    """Checkpoint is corrupt, tampered with, or from an unsupported version."""


def _enc_fitness(x):
    return x if math.isfinite(x) else None


def _dec_fitness(x):
    return WORST_FITNESS if x is None else float(x)


def state_to_dict(state: RunState) -> dict:
    return {
        "config": state.config.to_dict(),
        "generation": state.generation,
        "population": [genome_to_dict(g) for g in state.population],
        "rng_state": state.rng_state,
        "best_genome": None if state.best_genome is None else genome_to_dict(state.best_genome),
        "best_fitness": _enc_fitness(state.best_fitness),
        "population_diversity": state.population_diversity,
        "records": [
            {
                "generation": r.generation,
                "fitness": [_enc_fitness(f) for f in r.fitness],
                "best_genome": genome_to_dict(r.best_genome),
                "best_fitness": _enc_fitness(r.best_fitness),
                "best_so_far": _enc_fitness(r.best_so_far),
                "duration": r.duration,
                "rng_digest": r.rng_digest,
            }
            for r in state.records
        ],
    }


def state_from_dict(d: dict) -> RunState:
    return RunState(
        config=EvolutionConfig.from_dict(d["config"]),
        generation=int(d["generation"]),
        population=[genome_from_dict(g) for g in d["population"]],
        rng_state=d["rng_state"],
        records=[
            GenerationRecord(
                generation=r["generation"],
                fitness=[_dec_fitness(f) for f in r["fitness"]],
                best_genome=genome_from_dict(r["best_genome"]),
                best_fitness=_dec_fitness(r["best_fitness"]),
                best_so_far=_dec_fitness(r["best_so_far"]),
                duration=r["duration"],
                rng_digest=r["rng_digest"],
            )
            for r in d["records"]
        ],
        best_genome=None if d["best_genome"] is None else genome_from_dict(d["best_genome"]),
        best_fitness=_dec_fitness(d["best_fitness"]),
        population_diversity=[float(x) for x in d["population_diversity"]],
    )


def encode_checkpoint(state: RunState) -> bytes:
    payload = json.dumps(state_to_dict(state), sort_keys=True, indent=1).encode()
    digest = hashlib.sha256(payload).hexdigest()
    return f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} {digest}\n".encode() + payload


def decode_checkpoint(buf: bytes) -> RunState:
    head, sep, payload = buf.partition(b"\n")
    parts = head.decode("ascii", errors="replace").split(" ")
    if not sep or len(parts) != 3 or parts[0] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad header)")
    if parts[1] != str(CHECKPOINT_VERSION):
        raise CheckpointError(f"unsupported checkpoint version {parts[1]!r}")
    if hashlib.sha256(payload).hexdigest() != parts[2]:
        raise CheckpointError("checkpoint digest mismatch: file is corrupt or was modified")
    try:
        return state_from_dict(json.loads(payload))
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"checkpoint payload unreadable: {exc}") from None


def checkpoint(state: RunState, path) -> None:
    _atomic_write(path, encode_checkpoint(state))


def resume(path) -> RunState:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def random_search(fitness_fn, budget, rng):
    """Best of ``budget`` independent random genomes; the GA's baseline."""
    best_g, best_f = None, WORST_FITNESS
    for _ in range(budget):
        g = random_genome(rng)
        f = fitness_fn(g, 0)
        if best_g is None or f < best_f:
            best_g, best_f = g, f
    return best_g, best_f
