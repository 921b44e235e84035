"""Monte Carlo of the mean incremental key rank of a no-information attacker.

Each draw: near-uniform probabilities (ties broken by tiny noise) for an
attack pool, random plaintexts and key, then 100 folds at N=200. Prints the
spread and how much of it the [100, 155] band covers, per pool size.
"""
import argparse

import numpy as np

from nascty.attack import guessing_entropy


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--draws", type=int, default=200)
    ap.add_argument("--pools", default="2000,10000")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    for pool in map(int, args.pools.split(",")):
        vals = []
        for _ in range(args.draws):
            p = 1 / 256 * (1 + 1e-3 * rng.standard_normal((pool, 256)))
            p /= p.sum(axis=1, keepdims=True)
            rep = guessing_entropy(p, rng.integers(0, 256, pool), int(rng.integers(256)), 200, 100,
                                   int(rng.integers(2**31)))
            vals.append(rep.mean_incremental_key_rank)
        v = np.array(vals)
        inside = np.mean((v >= 100) & (v <= 155))
        print(f"pool {pool}: mean {v.mean():.2f} sd {v.std():.2f} "
              f"[{v.min():.1f}, {v.max():.1f}] in band {inside:.3f}")


if __name__ == "__main__":
    main()
