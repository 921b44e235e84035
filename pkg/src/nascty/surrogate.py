"""Training-free fitness: normalized distance from a fixed target architecture.

Used to exercise the GA loop quickly. Lower is better, 0 only for the target.
"""
from __future__ import annotations

from .genome import (DENSE_NEURONS, FILTER_SIZE, MAX_CONV_BLOCKS, MAX_DENSE, N_FILTERS, POOL_SIZE, POOL_STRIDE,
                     ConvBlockGene, DenseGene, Genome, PoolGene)

TARGET = Genome(
    conv_blocks=(ConvBlockGene(16, 11, True, PoolGene("avg", 2, 2)),
                 ConvBlockGene(64, 3, False, PoolGene("max", 4, 4))),
    lone_pool=None,
    dense_layers=(DenseGene(15), DenseGene(10)),
)


def _span(bounds):
    return float(bounds[1] - bounds[0])


def _pool_distance(a: PoolGene, b: PoolGene):
    return ((a.kind != b.kind) + abs(a.size - b.size) / _span(POOL_SIZE)
            + abs(a.stride - b.stride) / _span(POOL_STRIDE))


def _block_distance(a: ConvBlockGene, b: ConvBlockGene):
    return (abs(a.n_filters - b.n_filters) / _span(N_FILTERS) + abs(a.filter_size - b.filter_size) / _span(FILTER_SIZE)
            + (a.batch_norm != b.batch_norm) + _pool_distance(a.pool, b.pool))


def surrogate_fitness(g: Genome, seed: int = 0, target: Genome = TARGET) -> float:
    """Layer-count mismatch dominates; aligned genes add their normalized differences.

    ``seed`` is accepted for the fitness-function signature and ignored.
    """
    d = 6.0 * abs(len(g.conv_blocks) - len(target.conv_blocks))
    d += 1.0 * abs(len(g.dense_layers) - len(target.dense_layers))
    d += sum(_block_distance(a, b) for a, b in zip(g.conv_blocks, target.conv_blocks))
    d += sum(abs(a.n_neurons - b.n_neurons) / _span(DENSE_NEURONS)
             for a, b in zip(g.dense_layers, target.dense_layers))
    if (g.lone_pool is None) != (target.lone_pool is None):
        d += 1.0
    elif g.lone_pool is not None:
        d += _pool_distance(g.lone_pool, target.lone_pool)
    # keeps the scale comparable to the worst case
    return d / (6.0 * MAX_CONV_BLOCKS + MAX_DENSE)
