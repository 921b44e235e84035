"""GA versus random search on the training-free surrogate fitness.

Writes one row per seed: generation-0 best, GA final best, random-search best
at the same evaluation budget.

    python scripts/surrogate_vs_random.py --runs 100 --out surrogate.csv
"""
import argparse
import csv

import numpy as np

from nascty import evolution as E
from nascty.surrogate import surrogate_fitness


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--population", type=int, default=20)
    ap.add_argument("--generations", type=int, default=20)
    ap.add_argument("--eta", type=float, default=20.0)
    ap.add_argument("--crossover", default="one_point")
    ap.add_argument("--out", default="surrogate.csv")
    args = ap.parse_args()

    budget = args.population * args.generations
    rows = []
    for seed in range(args.runs):
        cfg = E.EvolutionConfig(population_size=args.population, max_generations=args.generations,
                                eta=args.eta, crossover_kind=args.crossover, master_seed=seed)
        state = E.run(cfg, fitness_fn=surrogate_fitness)
        _, rs = E.random_search(surrogate_fitness, budget, np.random.default_rng([seed, 99]))
        rows.append((seed, state.records[0].best_fitness, state.best_fitness, rs))

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "gen0_best", "ga_best", "random_search_best"])
        w.writerows(rows)
    arr = np.array([r[1:] for r in rows])
    print(f"improved over generation 0: {int(np.sum(arr[:, 1] < arr[:, 0]))}/{len(rows)}")
    print(f"median final fitness: GA {np.median(arr[:, 1]):.4f}, random search {np.median(arr[:, 2]):.4f}")


if __name__ == "__main__":
    main()
