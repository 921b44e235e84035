"""CNN architecture genomes and their genetic operators.

A genome holds 0-5 convolutional blocks (filters, filter size, batch-norm
flag, pooling), an optional lone pooling layer that only exists when there are
no blocks, and 1-5 dense layers. Genomes are immutable values; every operator
takes an explicit ``numpy.random.Generator`` and returns new genomes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .engine import Activation, BatchNorm, Conv1D, Dense, Flatten, Pool, SoftmaxOutput, pooled_length

MAX_CONV_BLOCKS = 5
MIN_DENSE, MAX_DENSE = 1, 5
N_FILTERS = (2, 128)
FILTER_SIZE = (1, 50)
POOL_SIZE = (2, 50)
POOL_STRIDE = (2, 50)
DENSE_NEURONS = (1, 20)
POOL_KINDS = ("avg", "max")

GENOME_FORMAT = "nascty-genome"
GENOME_VERSION = 1

# redraws of one-point crossover cut points before falling back to repair
CROSSOVER_ATTEMPTS = 16


@dataclass(frozen=True)
class PoolGene:
    kind: str
    size: int
    stride: int


@dataclass(frozen=True)
class ConvBlockGene:
    n_filters: int
    filter_size: int
    batch_norm: bool
    pool: PoolGene


@dataclass(frozen=True)
class DenseGene:
    n_neurons: int


@dataclass(frozen=True)
class Genome:
    conv_blocks: tuple = ()
    lone_pool: Optional[PoolGene] = None
    dense_layers: tuple = (DenseGene(10),)

    def __post_init__(self):
        object.__setattr__(self, "conv_blocks", tuple(self.conv_blocks))
        object.__setattr__(self, "dense_layers", tuple(self.dense_layers))

    def n_hyperparameters(self):
        return 6 * len(self.conv_blocks) + (3 if self.lone_pool is not None else 0) + len(self.dense_layers)


class GenomeError(ValueError):
    """A genome violates a range or structural bound."""


class InexpressibleGenome(ValueError):
    def __init__(self, layer_index, message):
        super().__init__(f"inexpressible genome at layer {layer_index}: {message}")
        self.layer_index = layer_index


def _check_range(name, value, bounds):
    lo, hi = bounds
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise GenomeError(f"{name} must be an integer, got {value!r}")
    if not lo <= value <= hi:
        raise GenomeError(f"{name}={value} outside [{lo}, {hi}]")


def _validate_pool(p, where):
    if p.kind not in POOL_KINDS:
        raise GenomeError(f"{where}.kind={p.kind!r} not one of {POOL_KINDS}")
    _check_range(f"{where}.size", p.size, POOL_SIZE)
    _check_range(f"{where}.stride", p.stride, POOL_STRIDE)


def validate(g: Genome) -> Genome:
    if len(g.conv_blocks) > MAX_CONV_BLOCKS:
        raise GenomeError(f"{len(g.conv_blocks)} conv blocks, max {MAX_CONV_BLOCKS}")
    if not MIN_DENSE <= len(g.dense_layers) <= MAX_DENSE:
        raise GenomeError(f"{len(g.dense_layers)} dense layers, must be in [{MIN_DENSE}, {MAX_DENSE}]")
    if g.lone_pool is not None:
        if g.conv_blocks:
            raise GenomeError("lone_pool is only allowed when there are no conv blocks")
        _validate_pool(g.lone_pool, "lone_pool")
    for i, b in enumerate(g.conv_blocks):
        _check_range(f"conv_blocks[{i}].n_filters", b.n_filters, N_FILTERS)
        _check_range(f"conv_blocks[{i}].filter_size", b.filter_size, FILTER_SIZE)
        if not isinstance(b.batch_norm, bool):
            raise GenomeError(f"conv_blocks[{i}].batch_norm must be a boolean")
        _validate_pool(b.pool, f"conv_blocks[{i}].pool")
    for i, d in enumerate(g.dense_layers):
        _check_range(f"dense_layers[{i}].n_neurons", d.n_neurons, DENSE_NEURONS)
    return g


def is_valid(g: Genome) -> bool:
    try:
        validate(g)
    except GenomeError:
        return False
    return True


# ----------------------------------------------------------- random genomes

def _uniform_int(rng, bounds):
    return int(rng.integers(bounds[0], bounds[1] + 1))


def random_pool(rng) -> PoolGene:
    return PoolGene(POOL_KINDS[int(rng.integers(2))], _uniform_int(rng, POOL_SIZE), _uniform_int(rng, POOL_STRIDE))


def random_conv_block(rng) -> ConvBlockGene:
    return ConvBlockGene(
        n_filters=_uniform_int(rng, N_FILTERS),
        filter_size=_uniform_int(rng, FILTER_SIZE),
        batch_norm=bool(rng.integers(2)),
        pool=random_pool(rng),
    )


def random_dense(rng) -> DenseGene:
    return DenseGene(_uniform_int(rng, DENSE_NEURONS))


def random_genome(rng) -> Genome:
    n_conv = int(rng.integers(0, MAX_CONV_BLOCKS + 1))
    blocks = tuple(random_conv_block(rng) for _ in range(n_conv))
    lone = random_pool(rng) if n_conv == 0 and rng.random() < 0.5 else None
    n_dense = int(rng.integers(MIN_DENSE, MAX_DENSE + 1))
    return Genome(blocks, lone, tuple(random_dense(rng) for _ in range(n_dense)))


# --------------------------------------------------------------- expression

def express(g: Genome, input_length: int) -> list:
    """Layer specs for ``g``; raises InexpressibleGenome if pooling empties the sequence."""
    specs = []
    length = input_length

    def add_pool(p):
        nonlocal length
        length = pooled_length(length, p.size, p.stride)
        specs.append(Pool(p.kind, p.size, p.stride))
        if length < 1:
            raise InexpressibleGenome(len(specs) - 1, f"pool(size={p.size}, stride={p.stride}) leaves length {length}")

    for b in g.conv_blocks:
        specs.append(Conv1D(b.n_filters, b.filter_size))
        if b.batch_norm:
            specs.append(BatchNorm())
        specs.append(Activation("selu"))
        add_pool(b.pool)
    if g.lone_pool is not None:
        add_pool(g.lone_pool)
    specs.append(Flatten())
    for d in g.dense_layers:
        specs.append(Dense(d.n_neurons))
        specs.append(Activation("selu"))
    specs.append(SoftmaxOutput(256))
    return specs


# ---------------------------------------------------------------- crossover

def _divide_lone_pools(a, b, rng, swap=None):
    """Hand each parent's lone pool to a child; a swap sends a's to child 2."""
    if swap is None:
        swap = bool(rng.integers(2))
    return (b.lone_pool, a.lone_pool) if swap else (a.lone_pool, b.lone_pool)


def _finish(conv, lone, dense):
    return Genome(tuple(conv), None if conv else lone, tuple(dense))


def _cut_lists(xs, ys, rng, lo, hi, cuts=None):
    if cuts is not None:
        ca, cb = cuts
        return list(xs[:ca]) + list(ys[cb:]), list(ys[:cb]) + list(xs[ca:])
    for _ in range(CROSSOVER_ATTEMPTS):
        ca = int(rng.integers(0, len(xs) + 1))
        cb = int(rng.integers(0, len(ys) + 1))
        c1 = list(xs[:ca]) + list(ys[cb:])
        c2 = list(ys[:cb]) + list(xs[ca:])
        if lo <= len(c1) <= hi and lo <= len(c2) <= hi:
            return c1, c2
    # no valid cut found: keep the last draw, truncated to the upper bound
    return c1[:hi], c2[:hi]


def one_point_crossover(a: Genome, b: Genome, rng, cuts=None, swap_lone_pools=None):
    """Cut both parents' block lists and dense lists and exchange the tails.

    ``cuts`` optionally fixes ``((conv_a, conv_b), (dense_a, dense_b))`` and
    ``swap_lone_pools`` fixes the lone-pool division; both are drawn from
    ``rng`` otherwise.
    """
    conv1, conv2 = _cut_lists(a.conv_blocks, b.conv_blocks, rng, 0, MAX_CONV_BLOCKS, cuts and cuts[0])
    dense1, dense2 = _cut_lists(a.dense_layers, b.dense_layers, rng, MIN_DENSE, MAX_DENSE, cuts and cuts[1])
    for child, donor in ((dense1, b), (dense2, a)):
        if not child:
            child.append(donor.dense_layers[int(rng.integers(len(donor.dense_layers)))])
    lone1, lone2 = _divide_lone_pools(a, b, rng, swap_lone_pools)
    return _finish(conv1, lone1, dense1), _finish(conv2, lone2, dense2)


def _mix(x, y, fields, rng):
    pick = rng.integers(2, size=len(fields))
    first = {f: getattr(y if p else x, f) for f, p in zip(fields, pick)}
    second = {f: getattr(x if p else y, f) for f, p in zip(fields, pick)}
    return first, second


def _mix_blocks(x: ConvBlockGene, y: ConvBlockGene, rng):
    c1, c2 = _mix(x, y, ("n_filters", "filter_size", "batch_norm"), rng)
    p1, p2 = _mix(x.pool, y.pool, ("kind", "size", "stride"), rng)
    return ConvBlockGene(pool=PoolGene(**p1), **c1), ConvBlockGene(pool=PoolGene(**p2), **c2)


def _mix_dense(x: DenseGene, y: DenseGene, rng):
    d1, d2 = _mix(x, y, ("n_neurons",), rng)
    return DenseGene(**d1), DenseGene(**d2)


def parameterwise_crossover(a: Genome, b: Genome, rng, swap_lone_pools=None):
    """Per-gene uniform crossover over aligned positions.

    Child 1 takes each scalar gene from either parent with probability 1/2,
    child 2 takes the other one. Positions past the shorter parent go to
    child 1 unchanged.
    """
    children = []
    for xs, ys, mix in ((a.conv_blocks, b.conv_blocks, _mix_blocks), (a.dense_layers, b.dense_layers, _mix_dense)):
        first, second = [], []
        for x, y in zip(xs, ys):
            c1, c2 = mix(x, y, rng)
            first.append(c1)
            second.append(c2)
        longer = xs if len(xs) > len(ys) else ys
        first.extend(longer[len(second):])
        children.append((first, second))
    (conv1, conv2), (dense1, dense2) = children
    lone1, lone2 = _divide_lone_pools(a, b, rng, swap_lone_pools)
    return _finish(conv1, lone1, dense1), _finish(conv2, lone2, dense2)


CROSSOVERS = {"one_point": one_point_crossover, "parameter_wise": parameterwise_crossover}


# ----------------------------------------------------------------- mutation

def polynomial_mutation(x, low, high, eta, u):
    """Bounded polynomial mutation of a real ``x`` in [low, high] for a uniform draw ``u``.

    ``u < 0.5`` moves toward ``low`` (reaching it as u -> 0), ``u >= 0.5`` toward
    ``high`` (reaching it as u -> 1); u = 0.5 leaves x unchanged.
    """
    if u < 0.5:
        delta = (2.0 * u) ** (1.0 / (1.0 + eta)) - 1.0
        return x + delta * (x - low)
    delta = 1.0 - (2.0 * (1.0 - u)) ** (1.0 / (1.0 + eta))
    return x + delta * (high - x)


def mutate_int(x, bounds, eta, rng):
    low, high = bounds
    y = polynomial_mutation(float(x), low, high, eta, rng.random())
    return int(min(max(math.floor(y + 0.5), low), high))


def _poly_pool(p, eta, rng, rate):
    kind = POOL_KINDS[int(rng.integers(2))] if rng.random() < rate else p.kind
    size = mutate_int(p.size, POOL_SIZE, eta, rng) if rng.random() < rate else p.size
    stride = mutate_int(p.stride, POOL_STRIDE, eta, rng) if rng.random() < rate else p.stride
    return PoolGene(kind, size, stride)


def polynomial_mutate_genome(g: Genome, eta, rng) -> Genome:
    """Mutate every scalar gene independently with probability 1/n.

    Integers go through polynomial mutation (rounded half up, clamped);
    booleans and pooling kinds are resampled uniformly when selected.
    """
    rate = 1.0 / g.n_hyperparameters()
    blocks = []
    for b in g.conv_blocks:
        n_filters = mutate_int(b.n_filters, N_FILTERS, eta, rng) if rng.random() < rate else b.n_filters
        filter_size = mutate_int(b.filter_size, FILTER_SIZE, eta, rng) if rng.random() < rate else b.filter_size
        batch_norm = bool(rng.integers(2)) if rng.random() < rate else b.batch_norm
        blocks.append(ConvBlockGene(n_filters, filter_size, batch_norm, _poly_pool(b.pool, eta, rng, rate)))
    lone = _poly_pool(g.lone_pool, eta, rng, rate) if g.lone_pool is not None else None
    dense = [
        DenseGene(mutate_int(d.n_neurons, DENSE_NEURONS, eta, rng)) if rng.random() < rate else d
        for d in g.dense_layers
    ]
    return Genome(tuple(blocks), lone, tuple(dense))


def _insert(seq, item, rng):
    pos = int(rng.integers(0, len(seq) + 1))
    return seq[:pos] + (item,) + seq[pos:]


def _remove(seq, rng):
    pos = int(rng.integers(0, len(seq)))
    return seq[:pos] + seq[pos + 1:]


def mutate(g: Genome, eta, rng) -> Genome:
    """Apply one of add-layer, remove-layer or polynomial mutation, chosen uniformly.

    Structural methods that cannot apply (lists at their bounds) fall through
    to polynomial mutation.
    """
    method = int(rng.integers(3))
    if method == 0:
        lists = [name for name, seq, hi in (("conv", g.conv_blocks, MAX_CONV_BLOCKS),
                                            ("dense", g.dense_layers, MAX_DENSE)) if len(seq) < hi]
        if lists:
            which = lists[int(rng.integers(len(lists)))]
            if which == "conv":
                return Genome(_insert(g.conv_blocks, random_conv_block(rng), rng), None, g.dense_layers)
            return replace(g, dense_layers=_insert(g.dense_layers, random_dense(rng), rng))
    elif method == 1:
        lists = [name for name, seq, lo in (("conv", g.conv_blocks, 0),
                                            ("dense", g.dense_layers, MIN_DENSE)) if len(seq) > lo]
        if lists:
            which = lists[int(rng.integers(len(lists)))]
            if which == "conv":
                return replace(g, conv_blocks=_remove(g.conv_blocks, rng))
            return replace(g, dense_layers=_remove(g.dense_layers, rng))
    return polynomial_mutate_genome(g, eta, rng)


# ------------------------------------------------------------ serialization

def genome_to_dict(g: Genome) -> dict:
    def pool(p):
        return None if p is None else {"kind": p.kind, "size": p.size, "stride": p.stride}

    return {
        "format": GENOME_FORMAT,
        "version": GENOME_VERSION,
        "conv_blocks": [
            {"n_filters": b.n_filters, "filter_size": b.filter_size, "batch_norm": b.batch_norm, "pool": pool(b.pool)}
            for b in g.conv_blocks
        ],
        "lone_pool": pool(g.lone_pool),
        "dense_layers": [{"n_neurons": d.n_neurons} for d in g.dense_layers],
    }


def serialize_genome(g: Genome) -> str:
    return json.dumps(genome_to_dict(g), sort_keys=True, separators=(",", ":"))


def _fields(d, where, keys):
    if not isinstance(d, dict):
        raise GenomeError(f"{where} must be an object")
    missing = [k for k in keys if k not in d]
    if missing:
        raise GenomeError(f"{where} is missing field(s) {missing}")
    extra = sorted(set(d) - set(keys))
    if extra:
        raise GenomeError(f"{where} has unknown field(s) {extra}")
    return [d[k] for k in keys]


def _parse_pool(d, where):
    kind, size, stride = _fields(d, where, ("kind", "size", "stride"))
    return PoolGene(kind, size, stride)


def genome_from_dict(d: dict) -> Genome:
    fmt, version, conv, lone, dense = _fields(
        d, "genome", ("format", "version", "conv_blocks", "lone_pool", "dense_layers")
    )
    if fmt != GENOME_FORMAT:
        raise GenomeError(f"format={fmt!r}, expected {GENOME_FORMAT!r}")
    if version != GENOME_VERSION:
        raise GenomeError(f"unsupported genome version {version!r}")
    if not isinstance(conv, list) or not isinstance(dense, list):
        raise GenomeError("conv_blocks and dense_layers must be lists")
    if len(conv) > MAX_CONV_BLOCKS:
        raise GenomeError(f"{len(conv)} conv blocks, max {MAX_CONV_BLOCKS}")
    blocks = []
    for i, b in enumerate(conv):
        n_filters, filter_size, batch_norm, pool = _fields(
            b, f"conv_blocks[{i}]", ("n_filters", "filter_size", "batch_norm", "pool")
        )
        blocks.append(ConvBlockGene(n_filters, filter_size, batch_norm, _parse_pool(pool, f"conv_blocks[{i}].pool")))
    layers = [DenseGene(*_fields(x, f"dense_layers[{i}]", ("n_neurons",))) for i, x in enumerate(dense)]
    g = Genome(tuple(blocks), None if lone is None else _parse_pool(lone, "lone_pool"), tuple(layers))
    return validate(g)


def parse_genome(text: str) -> Genome:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GenomeError(f"not valid genome JSON: {exc}") from None
    return genome_from_dict(d)


def describe(g: Genome) -> str:
    """One-line human summary, e.g. ``C(16x11,bn,avg 2/2) | D[10,10]``."""
    parts = []
    for b in g.conv_blocks:
        bn = ",bn" if b.batch_norm else ""
        parts.append(f"C({b.n_filters}x{b.filter_size}{bn},{b.pool.kind} {b.pool.size}/{b.pool.stride})")
    if g.lone_pool is not None:
        parts.append(f"P({g.lone_pool.kind} {g.lone_pool.size}/{g.lone_pool.stride})")
    parts.append("D[" + ",".join(str(d.n_neurons) for d in g.dense_layers) + "]")
    return " | ".join(parts)
