import re

import pytest

from nascty import report


def write_gen_csv(path):
    path.write_text("generation,best_fitness,best_so_far,mean_fitness,diversity,n_inexpressible\n"
                    "0,5.5,5.5,5.6,1.0,0\n1,5.25,5.25,5.4,0.5,1\n2,5.3,5.25,inf,0.5,8\n")


def test_empty_dir_error(tmp_path):
    with pytest.raises(report.ReportError, match="no logs found"):
        report.render(tmp_path)


def test_points_equal_csv_rows(tmp_path):
    write_gen_csv(tmp_path / "generations.csv")
    (tmp_path / "ge_curve.csv").write_text("n_traces,guessing_entropy\n1,3.5\n2,0.25\n3,0.0\n")
    report.render(tmp_path)
    svg = (tmp_path / "key_rank.svg").read_text()
    assert re.findall(r'data-x="([^"]+)" data-y="([^"]+)"', svg) == [("1", "3.5"), ("2", "0.25"), ("3", "0.0")]
    fit = (tmp_path / "fitness.svg").read_text()
    pts = re.findall(r'data-x="([^"]+)" data-y="([^"]+)"', fit)
    assert pts[:3] == [("0", "5.5"), ("1", "5.25"), ("2", "5.25")]
    assert ("2", "inf") not in pts
    summary = (tmp_path / "summary.md").read_text()
    assert "| 3 | 0.0 | 3 |" in summary


def test_rerender_byte_identical(tmp_path):
    write_gen_csv(tmp_path / "generations.csv")
    first = [open(p, "rb").read() for p in report.render(tmp_path)]
    second = [open(p, "rb").read() for p in report.render(tmp_path)]
    assert first == second


def test_corrupt_csv(tmp_path):
    (tmp_path / "generations.csv").write_text("generation,best_fitness\n")
    with pytest.raises(report.ReportError):
        report.render(tmp_path)
