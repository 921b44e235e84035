"""Train a hand-built reference CNN on a gen-traces directory and attack it.

Used to calibrate the end-to-end thresholds before trusting the GA's champion.

    python scripts/reference_cnn.py --data runs/desk/data
"""
import argparse

from nascty import attack, engine
from nascty.genome import ConvBlockGene, DenseGene, Genome, PoolGene, express
from nascty.trace_store import read_traceset

REFERENCE = Genome((ConvBlockGene(4, 1, True, PoolGene("avg", 2, 2)),), None, (DenseGene(10), DenseGene(10)))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", required=True)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--every", type=int, default=10)
    args = ap.parse_args()
    train = read_traceset(f"{args.data}/train.trc")
    valid = read_traceset(f"{args.data}/valid.trc")
    att = read_traceset(f"{args.data}/attack.trc")
    net = engine.Network(express(REFERENCE, train.n_samples), train.n_samples, seed=0)
    print("epoch,val_loss,ge_at_200,traces_to_rank0")
    for e in range(args.epochs):
        engine.train(net, train.traces, train.labels, 1, 100, 1e-3, seed=e)
        if (e + 1) % args.every == 0:
            rep = attack.attack(net, att, 200, 100, 0)
            print(f"{e + 1},{engine.evaluate_loss(net, valid.traces, valid.labels):.4f},{rep.final_ge},"
                  f"{rep.traces_to_rank0}", flush=True)


if __name__ == "__main__":
    main()
