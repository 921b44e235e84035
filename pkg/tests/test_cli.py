import json
import os

import numpy as np
import pytest

from nascty import cli, engine, report
from nascty.evolution import GENERATION_CSV, CHECKPOINT_FILE
from nascty.genome import ConvBlockGene, DenseGene, Genome, PoolGene, serialize_genome
from nascty.trace_model import SBOX, TraceSet
from nascty.trace_store import read_traceset

SMALL = ["--n-samples", "30", "--train-per-class", "2", "--val-per-class", "1", "--attack-traces", "300",
         "--noise-sigma", "0.2"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert cli.main(["gen-traces", "--out", str(out), "--seed", "5", *SMALL]) == 0
    return out


def test_gen_traces_counts_and_normalization(data_dir):
    train = read_traceset(data_dir / "train.trc")
    valid = read_traceset(data_dir / "valid.trc")
    attack = read_traceset(data_dir / "attack.trc")
    assert (len(train), len(valid), len(attack)) == (512, 256, 300)
    assert np.all(np.bincount(train.labels, minlength=256) == 2)
    assert np.all(np.bincount(valid.labels, minlength=256) == 1)
    assert train.normalized and attack.normalized
    assert train.traces.min() == -1 and train.traces.max() == 1
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert manifest["artifacts"]["train.trc"] and manifest["config"]["seed"] == 5


def test_gen_traces_deterministic(tmp_path, data_dir):
    assert cli.main(["gen-traces", "--out", str(tmp_path), "--seed", "5", *SMALL]) == 0
    for name in ("train.trc", "valid.trc", "attack.trc"):
        assert (tmp_path / name).read_bytes() == (data_dir / name).read_bytes()


def test_desync_zero_matches_undesynchronized_split(tmp_path):
    params = cli.TraceParams(n_samples_per_trace=30, leak_point_value=15, seed=2)
    plain = cli.build_splits(params, 1, 1, 200, desync_level=0)
    shifted = cli.build_splits(cli.TraceParams(n_samples_per_trace=30, leak_point_value=15, seed=2,
                                               max_desync=10), 1, 1, 200, desync_level=10)
    assert plain["attack"].plaintexts.tolist() == shifted["attack"].plaintexts.tolist()
    assert not plain["attack"].equals(shifted["attack"])
    # same params with desync 0 reproduce the plain split exactly
    again = cli.build_splits(params, 1, 1, 200, desync_level=0)
    assert all(again[k].equals(plain[k]) for k in plain)


def test_full_scale_split_sizes(tmp_path):
    args = ["gen-traces", "--out", str(tmp_path), "--n-samples", "4", "--leak-point", "2",
            "--train-per-class", "139", "--val-per-class", "15", "--attack-traces", "10"]
    assert cli.main(args) == 0
    train, valid = read_traceset(tmp_path / "train.trc"), read_traceset(tmp_path / "valid.trc")
    assert len(train) == 35584 and len(valid) == 3840
    assert set(np.bincount(train.labels, minlength=256)) == {139}
    assert set(np.bincount(valid.labels, minlength=256)) == {15}


def test_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as ei:
        cli.main(["evolve"])
    assert ei.value.code == 2
    with pytest.raises(SystemExit) as ei:
        cli.main(["gen-traces", "--out", str(tmp_path), "--desync-level", "7"])
    assert ei.value.code == 2
    assert cli.main(["evolve", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 4
    assert "missing train split" in capsys.readouterr().err
    assert cli.main(["gen-traces", "--out", str(tmp_path), "--n-samples", "10", "--desync-level", "10"]) == 3
    assert cli.main(["evolve", "--data", str(tmp_path), "--out", str(tmp_path / "o"), "--population", "7"]) in (3, 4)
    bad = tmp_path / "g.json"
    bad.write_text('{"format": "nascty-genome"}')
    assert cli.main(["eval-genome", "--genome", str(bad), "--data", str(tmp_path), "--out", str(tmp_path)]) == 3
    assert cli.main(["report", str(tmp_path / "empty_missing")]) == 4


def test_evolve_config_precedence(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"population_size": 6, "eta": 40.0}))
    args = cli.build_parser().parse_args(["evolve", "--data", "d", "--out", "o", "--config", str(conf),
                                          "--population", "4"])
    c = cli.config_from_args(args)
    assert (c.population_size, c.eta, c.crossover_kind, c.truncation_proportion) == (4, 40.0, "one_point", 1.0)
    big = cli.build_parser().parse_args(["evolve", "--data", "d", "--out", "o", "--population", "100",
                                         "--generations", "50"])
    assert cli.config_from_args(big).max_generations == 50


EVOLVE = ["--population", "4", "--generations", "3", "--epochs", "1", "--seed", "9"]


def test_evolve_resume_identical_csv(tmp_path, data_dir):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["evolve", "--data", str(data_dir), "--out", str(a), *EVOLVE]) == 0
    assert cli.main(["evolve", "--data", str(data_dir), "--out", str(b), *EVOLVE, "--stop-after", "1"]) == 0
    assert cli.main(["evolve", "--data", str(data_dir), "--out", str(b), "--resume", str(b / CHECKPOINT_FILE)]) == 0
    assert (a / GENERATION_CSV).read_bytes() == (b / GENERATION_CSV).read_bytes()
    assert len((a / GENERATION_CSV).read_text().splitlines()) == 4
    assert json.loads((a / "manifest.json").read_text())["generations_completed"] == 3


def test_architecture_parameter_count():
    g = Genome((ConvBlockGene(4, 3, True, PoolGene("avg", 2, 2)),), None, (DenseGene(10),))
    net = engine.Network(cli.express(g, 30), 30)
    # conv 1*3*4+4, bn 2*4, dense (15*4)*10+10, output 10*256+256
    expected = 16 + 8 + 610 + 2816
    assert net.n_parameters() == expected
    text = cli.architecture_summary(net)
    assert text.strip().endswith(f"trainable parameters: {expected}")


def test_eval_genome_attack_and_report(tmp_path, data_dir, capsys):
    gpath = tmp_path / "g.json"
    gpath.write_text(serialize_genome(Genome((), None, (DenseGene(8),))))
    out = tmp_path / "eval"
    args = ["eval-genome", "--genome", str(gpath), "--data", str(data_dir), "--out", str(out),
            "--epochs", "2", "--folds", "5", "--n-traces", "50"]
    assert cli.main(args) == 0
    for name in ("report.json", "ge_curve.csv", "network.bin", "architecture.txt", "manifest.json"):
        assert (out / name).exists()
    rep = json.loads((out / "report.json").read_text())
    assert rep["folds"] == 5 and len(rep["ge_curve"]) == 50

    out2 = tmp_path / "attack"
    assert cli.main(["attack", "--network", str(out / "network.bin"), "--data", str(data_dir), "--out", str(out2),
                     "--folds", "5", "--n-traces", "50"]) == 0
    assert (out2 / "ge_curve.csv").read_bytes() == (out / "ge_curve.csv").read_bytes()

    assert cli.main(["report", str(tmp_path)]) == 0
    assert (tmp_path / "key_rank.svg").exists() and (tmp_path / "summary.md").exists()


def test_eval_defaults():
    args = cli.build_parser().parse_args(["eval-genome", "--genome", "g", "--data", "d", "--out", "o"])
    assert (args.epochs, args.folds) == (50, 100)
    grid = cli.build_parser().parse_args(["grid-search", "--data", "d", "--out", "o"])
    cells = len(grid.etas) * len(grid.crossovers) * len(grid.truncations)
    assert cells == 8


class OraclePredictor:
    def __init__(self, labels):
        self.labels = labels

    def predict(self, traces):
        return np.eye(256)[self.labels[traces[:, 0].astype(int)]]


def test_emit_attack_report_perfect_attacker(tmp_path):
    rng = np.random.default_rng(0)
    pts = rng.integers(0, 256, 100, dtype=np.uint8)
    keys = np.full(100, 7, dtype=np.uint8)
    ts = TraceSet(np.arange(100, dtype=np.float32)[:, None], pts, keys, SBOX[pts ^ keys])
    rep, paths = cli.emit_attack_report(OraclePredictor(ts.labels), ts, tmp_path, 20, 3, 0)
    assert rep.traces_to_rank0 == 1
    assert json.loads(open(paths[0]).read())["traces_to_rank0"] == 1


def test_grid_search_tiny(tmp_path, data_dir):
    out = tmp_path / "grid"
    args = ["grid-search", "--data", str(data_dir), "--out", str(out), "--etas", "20", "--crossovers",
            "one_point,parameter_wise", "--truncations", "1.0", "--population", "2", "--generations", "1",
            "--tournament-size", "1", "--epochs", "1", "--eval-epochs", "1", "--folds", "2", "--n-traces", "20"]
    assert cli.main(args) == 0
    lines = (out / "grid.csv").read_text().splitlines()
    assert lines[0].split(",") == list(cli.GRID_COLUMNS)
    assert "mean_incremental_key_rank" in lines[0] and len(lines) == 3
