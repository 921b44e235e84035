"""Command-line entry point: ``nascty <verb> ...``.

Verbs: gen-traces, evolve, grid-search, eval-genome, attack, report.

Exit codes: 0 success, 2 usage, 3 validation, 4 data, 5 internal error.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import hashlib
import itertools
import json
import logging
import os
import sys

import numpy as np

from . import __version__, attack as attack_mod, engine, evolution, report
from .genome import GenomeError, InexpressibleGenome, express, parse_genome
from .trace_model import InsufficientClassError, TraceParams, desynchronize, generate, normalize, sample_balanced
from .trace_store import TraceFileError, read_traceset, write_traceset

log = logging.getLogger("nascty")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4, 5
DESYNC_LEVELS = (0, 10, 30, 50)
SPLIT_FILES = {"train": "train.trc", "valid": "valid.trc", "attack": "attack.trc"}


class DataError(Exception):
    pass


# ----------------------------------------------------------------- manifest

def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir, command, config, inputs=(), artifacts=(), started=None, extra=None):
    manifest = {
        "tool": "nascty",
        "tool_version": __version__,
        "command": command,
        "config": config,
        "inputs": {os.path.abspath(p): file_digest(p) for p in inputs},
        "artifacts": {os.path.relpath(p, out_dir): file_digest(p) for p in artifacts},
        "started": started or _now(),
        "finished": _now(),
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _seed(base, *stream):
    ss = np.random.SeedSequence([int(base) & (2**64 - 1), *stream])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# --------------------------------------------------------------- gen-traces

def build_splits(params: TraceParams, train_per_class, val_per_class, n_attack, desync_level=0):
    """Balanced, normalized train/validation splits and an attack split.

    The profiling pool is generated large enough that both balanced samples
    fit, desynchronized if requested, then sampled; validation comes from
    the traces left over after the training sample.
    """
    need = train_per_class + val_per_class
    n_pool = 256 * need * 2 + 4096
    for attempt in range(8):
        pool = generate(dataclasses.replace(params, seed=_seed(params.seed, 0, attempt)), n_pool)
        counts = np.bincount(pool.labels, minlength=256)
        if counts.min() >= need:
            break
        n_pool *= 2
    else:
        raise DataError("could not draw a large enough profiling pool")
    attack_set = generate(dataclasses.replace(params, seed=_seed(params.seed, 1)), n_attack)
    if desync_level:
        pool = desynchronize(pool, desync_level, _seed(params.seed, 2))
        attack_set = desynchronize(attack_set, desync_level, _seed(params.seed, 3))

    train, train_idx = sample_balanced(pool, train_per_class, _seed(params.seed, 4), return_indices=True)
    rest = pool.subset(np.setdiff1d(np.arange(len(pool)), train_idx))
    valid = sample_balanced(rest, val_per_class, _seed(params.seed, 5))

    train = normalize(train)
    ref = train.metadata["normalization"]
    return {"train": train, "valid": normalize(valid, ref), "attack": normalize(attack_set, ref)}


def cmd_gen_traces(args):
    if args.desync_level >= args.n_samples:
        raise ValueError(f"--desync-level {args.desync_level} must be below --n-samples {args.n_samples}")
    leak = args.leak_point if args.leak_point is not None else args.n_samples // 2
    params = TraceParams(
        n_samples_per_trace=args.n_samples,
        leak_point_value=leak,
        leak_point_mask=args.mask_leak_point,
        noise_sigma=args.noise_sigma,
        max_desync=args.desync_level,
        masking_enabled=args.masking,
        key_byte=args.key,
        seed=args.seed,
    )
    started = _now()
    splits = build_splits(params, args.train_per_class, args.val_per_class, args.attack_traces, args.desync_level)
    os.makedirs(args.out, exist_ok=True)
    paths = []
    for name, ts in splits.items():
        path = os.path.join(args.out, SPLIT_FILES[name])
        write_traceset(ts, path)
        paths.append(path)
        log.info("wrote %s: %d traces x %d samples", path, len(ts), ts.n_samples)
    lo, hi = splits["train"].metadata["normalization"]
    norm_path = os.path.join(args.out, "normalization.json")
    with open(norm_path, "w") as fh:
        json.dump({"min": [float(v) for v in lo], "max": [float(v) for v in hi]}, fh)
    paths.append(norm_path)
    config = dataclasses.asdict(params)
    config.update(train_per_class=args.train_per_class, val_per_class=args.val_per_class,
                  attack_traces=args.attack_traces, desync_level=args.desync_level)
    write_manifest(args.out, "gen-traces", config, artifacts=paths, started=started,
                   extra={"counts": {k: len(v) for k, v in splits.items()}})
    for name, ts in splits.items():
        print(f"{name}: {len(ts)} traces")
    return EXIT_OK


def load_split(data_dir, name):
    path = os.path.join(data_dir, SPLIT_FILES[name])
    if not os.path.exists(path):
        raise DataError(f"missing {name} split: {path} (run gen-traces first)")
    return read_traceset(path), path


# ------------------------------------------------------------------- evolve

CONFIG_FLAGS = {
    "population": "population_size",
    "generations": "max_generations",
    "tournament_size": "tournament_size",
    "truncation": "truncation_proportion",
    "crossover": "crossover_kind",
    "eta": "eta",
    "epochs": "train_epochs",
    "batch_size": "batch_size",
    "lr": "learning_rate",
    "seed": "master_seed",
    "workers": "parallel_workers",
}


def config_from_args(args, base=None):
    """Config file values, then flag overrides (flags win)."""
    values = dataclasses.asdict(base or evolution.EvolutionConfig())
    if getattr(args, "config", None):
        with open(args.config) as fh:
            values.update(json.load(fh))
    for flag, name in CONFIG_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    return evolution.EvolutionConfig.from_dict(values).validate()


def run_evolution(cfg, data_dir, out_dir, resume_path=None, stop_after=None):
    started = _now()
    train, train_path = load_split(data_dir, "train")
    valid, valid_path = load_split(data_dir, "valid")
    state = evolution.resume(resume_path) if resume_path else None
    if state is not None:
        state.config = dataclasses.replace(state.config, max_generations=cfg.max_generations,
                                           parallel_workers=cfg.parallel_workers)
        cfg = state.config
    state = evolution.run(cfg, train, valid, state=state, out_dir=out_dir, stop_after=stop_after)
    artifacts = [os.path.join(out_dir, f) for f in (evolution.GENERATION_CSV, evolution.TIMING_CSV,
                                                    evolution.CHECKPOINT_FILE, evolution.BEST_GENOME_FILE)]
    write_manifest(out_dir, "evolve", cfg.to_dict(), inputs=[train_path, valid_path],
                   artifacts=[p for p in artifacts if os.path.exists(p)], started=started,
                   extra={"generations_completed": state.generation,
                          "best_fitness": evolution._enc_fitness(state.best_fitness)})
    return state


def cmd_evolve(args):
    if args.resume:
        base = evolution.resume(args.resume).config
        cfg = config_from_args(args, base)
    else:
        cfg = config_from_args(args)
    state = run_evolution(cfg, args.data, args.out, args.resume, args.stop_after)
    print(f"generations completed: {state.generation}")
    print(f"best fitness: {state.best_fitness}")
    print(f"best genome: {os.path.join(args.out, evolution.BEST_GENOME_FILE)}")
    return EXIT_OK


# -------------------------------------------------------------- eval/attack

def architecture_summary(net: engine.Network) -> str:
    lines = [f"{'#':>3}  {'layer':<34} {'output':<14} {'params':>8}"]
    shape = (net.input_length, 1)
    for i, (spec, layer) in enumerate(zip(net.specs, net.layers)):
        if isinstance(spec, engine.Conv1D):
            shape = (shape[0], spec.n_filters)
        elif isinstance(spec, engine.Pool):
            shape = (engine.pooled_length(shape[0], spec.size, spec.stride), shape[1])
        elif isinstance(spec, engine.Flatten):
            shape = (shape[0] * shape[1],)
        elif isinstance(spec, (engine.Dense,)):
            shape = (spec.n_neurons,)
        elif isinstance(spec, engine.SoftmaxOutput):
            shape = (spec.n_classes,)
        n = sum(p.size for p in layer.params.values())
        desc = type(spec).__name__ + "(" + ", ".join(f"{k}={v}" for k, v in dataclasses.asdict(spec).items()) + ")"
        lines.append(f"{i:>3}  {desc:<34} {str(shape):<14} {n:>8}")
    lines.append(f"trainable parameters: {net.n_parameters()}")
    return "\n".join(lines) + "\n"


def emit_attack_report(predictor, attack_set, out_dir, n_traces, folds, seed):
    """Score ``predictor`` (anything with ``predict(traces)``) and write report + GE curve."""
    n = min(n_traces, len(attack_set))
    rep = attack_mod.attack(predictor, attack_set, n, folds, seed)
    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, "report.json"), os.path.join(out_dir, "ge_curve.csv")]
    with open(paths[0], "w") as fh:
        fh.write(rep.to_json())
    with open(paths[1], "w") as fh:
        fh.write(rep.curve_csv())
    return rep, paths


def _print_report(rep):
    t0 = rep.traces_to_rank0 if rep.traces_to_rank0 is not None else "not reached"
    print(f"mean incremental key rank: {rep.mean_incremental_key_rank:.5f}")
    print(f"final guessing entropy: {rep.final_ge:.3f} at {len(rep.ge_curve)} traces")
    print(f"traces to mean rank 0: {t0}")


def cmd_eval_genome(args):
    started = _now()
    with open(args.genome) as fh:
        genome = parse_genome(fh.read())
    train, train_path = load_split(args.data, "train")
    attack_set, attack_path = load_split(args.data, "attack")
    try:
        specs = express(genome, train.n_samples)
    except InexpressibleGenome as exc:
        raise ValueError(str(exc)) from None
    net = engine.Network(specs, train.n_samples, seed=args.seed)
    engine.train(net, train.traces, train.labels, args.epochs, args.batch_size, args.lr, args.seed,
                 callback=lambda e, loss: log.info("epoch %d: train loss %.5f", e + 1, loss))
    os.makedirs(args.out, exist_ok=True)
    net_path = os.path.join(args.out, "network.bin")
    engine.save_network(net, net_path)
    arch_path = os.path.join(args.out, "architecture.txt")
    with open(arch_path, "w") as fh:
        fh.write(architecture_summary(net))
    rep, paths = emit_attack_report(net, attack_set, args.out, args.n_traces, args.folds, args.seed)
    write_manifest(args.out, "eval-genome", vars_for_manifest(args), inputs=[args.genome, train_path, attack_path],
                   artifacts=[net_path, arch_path, *paths], started=started)
    print(architecture_summary(net), end="")
    _print_report(rep)
    return EXIT_OK


def cmd_attack(args):
    started = _now()
    net = engine.load_network(args.network)
    if args.traces:
        attack_set, attack_path = read_traceset(args.traces), args.traces
    else:
        attack_set, attack_path = load_split(args.data, "attack")
    rep, paths = emit_attack_report(net, attack_set, args.out, args.n_traces, args.folds, args.seed)
    write_manifest(args.out, "attack", vars_for_manifest(args), inputs=[args.network, attack_path],
                   artifacts=paths, started=started)
    _print_report(rep)
    return EXIT_OK


def vars_for_manifest(args):
    return {k: v for k, v in vars(args).items() if k != "func"}


# -------------------------------------------------------------- grid search

GRID_COLUMNS = ("eta", "crossover", "truncation", "best_repeat", "best_fitness",
                "mean_incremental_key_rank", "traces_to_rank0", "final_guessing_entropy")


def _csv_list(cast):
    def parse(text):
        return [cast(x) for x in text.split(",") if x]
    return parse


def cmd_grid_search(args):
    started = _now()
    base = config_from_args(args)
    attack_set, _ = load_split(args.data, "attack")
    train, _ = load_split(args.data, "train")
    rows = []
    for eta, crossover, trunc in itertools.product(args.etas, args.crossovers, args.truncations):
        cell = f"eta{eta:g}_{crossover}_trunc{trunc:g}"
        results = []
        for r in range(args.repeats):
            # repeat r shares its seed (and so its initial population) across all cells
            cfg = dataclasses.replace(base, eta=eta, crossover_kind=crossover, truncation_proportion=trunc,
                                      master_seed=base.master_seed + r).validate()
            out = os.path.join(args.out, cell, f"repeat{r}")
            state = run_evolution(cfg, args.data, out)
            results.append((state.best_fitness, r, state.best_genome))
            log.info("%s repeat %d: best fitness %.5f", cell, r, state.best_fitness)
        best_f, best_r, best_g = min(results, key=lambda t: (t[0], t[1]))
        if best_f == evolution.WORST_FITNESS:
            log.warning("%s: no trainable genome found, cell left unscored", cell)
            rows.append([eta, crossover, trunc, best_r, "inf", "", "", ""])
            continue
        net = engine.Network(express(best_g, train.n_samples), train.n_samples, seed=args.seed)
        engine.train(net, train.traces, train.labels, args.eval_epochs, base.batch_size, base.learning_rate, args.seed)
        rep, _ = emit_attack_report(net, attack_set, os.path.join(args.out, cell, "eval"), args.n_traces,
                                    args.folds, args.seed)
        rows.append([eta, crossover, trunc, best_r, repr(best_f), repr(rep.mean_incremental_key_rank),
                     rep.traces_to_rank0 if rep.traces_to_rank0 is not None else "", repr(rep.final_ge)])
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "grid.csv")
    with open(path, "w") as fh:
        fh.write(",".join(GRID_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(str(x) for x in row) + "\n")
    write_manifest(args.out, "grid-search", vars_for_manifest(args), artifacts=[path], started=started)
    print(open(path).read(), end="")
    return EXIT_OK


def cmd_report(args):
    for path in report.render(args.run_dir):
        print(path)
    return EXIT_OK


# ------------------------------------------------------------------- parser

def _add_evolution_flags(p):
    p.add_argument("--config", help="JSON file with EvolutionConfig fields; flags override it")
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--tournament-size", type=int)
    p.add_argument("--truncation", type=float)
    p.add_argument("--crossover", choices=sorted(evolution.CROSSOVERS))
    p.add_argument("--eta", type=float)
    p.add_argument("--epochs", type=int, help="training epochs per fitness evaluation (default 10)")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="parallel fitness workers (NASCTY_WORKERS overrides)")


def build_parser():
    parser = argparse.ArgumentParser(prog="nascty", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"nascty {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-traces", help="generate synthetic train/valid/attack trace files")
    p.add_argument("--out", required=True)
    p.add_argument("--n-samples", type=int, default=700)
    p.add_argument("--leak-point", type=int, help="sample index of the S-box leak (default: middle)")
    p.add_argument("--mask-leak-point", type=int, help="sample index leaking HW of the mask")
    p.add_argument("--noise-sigma", type=float, default=0.5)
    p.add_argument("--masking", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--key", type=lambda s: int(s, 0), default=0x4D)
    p.add_argument("--train-per-class", type=int, default=139)
    p.add_argument("--val-per-class", type=int, default=15)
    p.add_argument("--attack-traces", type=int, default=10000)
    p.add_argument("--desync-level", type=int, choices=DESYNC_LEVELS, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_traces)

    p = sub.add_parser("evolve", help="run the genetic algorithm")
    p.add_argument("--data", required=True, help="directory written by gen-traces")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-after", type=int, help="stop once this many generations are complete")
    _add_evolution_flags(p)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("grid-search", help="evolve over a grid of GA parameters")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--etas", type=_csv_list(float), default=[20.0, 40.0])
    p.add_argument("--crossovers", type=_csv_list(str), default=["one_point", "parameter_wise"])
    p.add_argument("--truncations", type=_csv_list(float), default=[0.5, 1.0])
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--eval-epochs", type=int, default=50)
    p.add_argument("--folds", type=int, default=100)
    p.add_argument("--n-traces", type=int, default=1000)
    _add_evolution_flags(p)
    p.set_defaults(func=cmd_grid_search)

    for name, func, help_ in (("eval-genome", cmd_eval_genome, "train a genome and score it as an attack"),
                              ("attack", cmd_attack, "score a saved network on attack traces")):
        p = sub.add_parser(name, help=help_)
        if name == "eval-genome":
            p.add_argument("--genome", required=True)
            p.add_argument("--data", required=True)
            p.add_argument("--epochs", type=int, default=50)
            p.add_argument("--batch-size", type=int, default=100)
            p.add_argument("--lr", type=float, default=1e-3)
        else:
            p.add_argument("--network", required=True)
            p.add_argument("--data", help="directory with attack.trc")
            p.add_argument("--traces", help="explicit attack trace file")
        p.add_argument("--out", required=True)
        p.add_argument("--folds", type=int, default=100)
        p.add_argument("--n-traces", type=int, default=1000)
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="render plots and a summary from a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.command == "attack" and not (args.data or args.traces):
        parser.error("attack needs --data or --traces")
    if args.command == "grid-search":
        bad = [c for c in args.crossovers if c not in evolution.CROSSOVERS]
        if bad:
            parser.error(f"unknown crossover(s) {bad}")
    try:
        return args.func(args)
    except (DataError, TraceFileError, evolution.CheckpointError, report.ReportError,
            InsufficientClassError, FileNotFoundError) as exc:
        print(f"nascty: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (GenomeError, ValueError) as exc:
        print(f"nascty: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"nascty: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
