import csv
import json

import numpy as np
import pytest

from udfs.cli import main, read_config


def _write_data(path, X, y):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(X.shape[1])] + ["y"])
        w.writerows(np.column_stack([X, y]).tolist())


def test_space_size(capsys):
    assert main(["space-size", "--vars", "2", "--intermediaries", "3"]) == 0
    assert capsys.readouterr().out.strip() == "43200"


def test_list_problems(capsys):
    assert main(["list-problems", "--suite", "nguyen"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 12 and lines[0].startswith("Nguyen-1\t")


def test_judge(capsys):
    assert main(["judge", "--truth", "x0^2 + x0", "--candidate", "x0*(x0 + 1) + 3"]) == 0
    out = capsys.readouterr().out
    assert "recovered: True" in out
    assert main(["judge", "--truth", "x0^2", "--candidate", "x0^3"]) == 0
    assert "recovered: False" in capsys.readouterr().out


def test_config_reader(tmp_path):
    f = tmp_path / "c.conf"
    f.write_text("[search]\nintermediaries = 2  # small\nscreen-factor = 0\nout = 'x.json'\n")
    assert read_config(f) == {"intermediaries": "2", "screen_factor": "0", "out": "x.json"}


def test_fit_with_config(tmp_path, capsys):
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (200, 1))
    _write_data(tmp_path / "d.csv", X, X[:, 0] ** 2 + X[:, 0])
    out, front = tmp_path / "m.json", tmp_path / "front.csv"
    conf = tmp_path / "c.conf"
    conf.write_text(f"data = {tmp_path / 'd.csv'}\nintermediaries = 2\nskeletons = 2000\n")
    assert main(["fit", "--config", str(conf), "--out", str(out), "--front-csv", str(front)]) == 0
    records = json.loads(out.read_text())
    chosen = [r for r in records if r["selected"]]
    assert len(chosen) == 1 and chosen[0]["r2"] > 1 - 1e-9
    assert front.read_text().count("\n") == len(records) + 1
    assert "selected:" in capsys.readouterr().out


def test_unknown_config_key(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("bogus = 1\n")
    with pytest.raises(SystemExit):
        main(["space-size", "--vars", "1", "--intermediaries", "1", "--config", str(conf)])


def test_bad_header_returns_error(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("a,b\n1,2\n")
    assert main(["fit", "--data", str(tmp_path / "d.csv")]) == 2
    assert "header" in capsys.readouterr().err


def test_bench_small(tmp_path, capsys):
    out = tmp_path / "r.csv"
    rc = main(["bench", "--problems", "Nguyen-8,Koza-1", "--intermediaries", "1",
               "--skeletons", "500", "--noise", "0", "--out", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "Nguyen-8" in text and "recovery" in text
    rows = list(csv.DictReader(out.open()))
    assert [r["problem"] for r in rows] == ["Nguyen-8", "Koza-1"]
    assert rows[0]["recovered"] == "1"


def test_unknown_problem_returns_error(capsys):
    assert main(["bench", "--problems", "Nope", "--intermediaries", "1"]) == 2
