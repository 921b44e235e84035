"""Scaled synthetic end-to-end run: traces -> evolve -> train champion -> attack -> report.

    python scripts/desk_pipeline.py --out runs/desk [--masking] [--mask-leak-point 200]
"""
import argparse
import json
import os
import sys

from nascty import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=1, help="trace seed")
    ap.add_argument("--ga-seed", type=int, default=3)
    ap.add_argument("--population", type=int, default=8)
    ap.add_argument("--generations", type=int, default=5)
    ap.add_argument("--train-per-class", type=int, default=32)
    ap.add_argument("--noise-sigma", type=float, default=0.5)
    ap.add_argument("--desync-level", type=int, default=0)
    ap.add_argument("--masking", action="store_true")
    ap.add_argument("--mask-leak-point", type=int)
    args = ap.parse_args()

    data, run, ev = (os.path.join(args.out, d) for d in ("data", "run", "eval"))
    gen = ["gen-traces", "--out", data, "--seed", str(args.seed), "--noise-sigma", str(args.noise_sigma),
           "--train-per-class", str(args.train_per_class), "--desync-level", str(args.desync_level)]
    if args.masking:
        gen.append("--masking")
    if args.mask_leak_point is not None:
        gen += ["--mask-leak-point", str(args.mask_leak_point)]
    steps = [
        gen,
        ["evolve", "--data", data, "--out", run, "--population", str(args.population),
         "--generations", str(args.generations), "--seed", str(args.ga_seed)],
        ["eval-genome", "--genome", os.path.join(run, "best_genome.json"), "--data", data, "--out", ev,
         "--n-traces", "200"],
        ["report", args.out],
    ]
    for argv in steps:
        print("$ nascty " + " ".join(argv), flush=True)
        code = cli.main(["-v", *argv])
        if code:
            sys.exit(code)
    rep = json.load(open(os.path.join(ev, "report.json")))
    print(json.dumps({k: rep[k] for k in ("final_guessing_entropy", "mean_incremental_key_rank",
                                          "traces_to_rank0")}, indent=2))


if __name__ == "__main__":
    main()
