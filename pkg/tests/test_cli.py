import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from tinydrop import cli


def test_defaults():
    cfg = cli.parse_args(["eval", "--tau", "0.8"])
    assert (cfg.tau, cfg.gamma, cfg.r_max, cfg.workers) == (0.8, 0.5, 0.7, 1)
    sw = cli.parse_args(["sweep", "--tau", "0.5,0.9", "--gamma", "0.25,1"])
    assert sw.grid == [(0.5, 0.25), (0.5, 1.0), (0.9, 0.25), (0.9, 1.0)]


@pytest.mark.parametrize("argv", [
    ["eval", "--tau", "1.0"],
    ["eval", "--tau", "0"],
    ["eval", "--gamma", "-1"],
    ["eval", "--r-max", "1.0"],
    ["eval", "--tau", "0.5,0.6"],
    ["eval", "--workers", "0"],
    ["sweep", "--tau", "x"],
    ["infer"],
    ["bogus"],
])
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as e:
        cli.parse_args(argv)
    assert e.value.code == 2


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv("TINYDROP_SEED", "42")
    assert cli.parse_args(["gen-data"]).seed == 42
    assert cli.parse_args(["gen-data", "--seed", "3"]).seed == 3


def test_missing_file_is_runtime_error(tmp_path, capsys):
    code = cli.main(["eval", "--data", str(tmp_path / "nope"), "--guidance", str(tmp_path / "g.tdw"),
                     "--target", str(tmp_path / "t.tdw"), "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code == 1 and err.count("\n") == 1 and err.startswith("tinydrop eval: error:")


def test_end_to_end(tmp_path, capsys):
    d, g, t = tmp_path / "data", tmp_path / "g.tdw", tmp_path / "t.tdw"
    assert cli.main(["gen-data", "--n", "40", "--out", str(d), "--seed", "1"]) == 0
    assert cli.main(["train", "--data", str(d), "--role", "guidance", "--epochs", "1", "--out", str(g)]) == 0
    assert cli.main(["train", "--data", str(d), "--role", "target", "--epochs", "1", "--out", str(t)]) == 0
    models = ["--guidance", str(g), "--target", str(t)]

    sal, sel = tmp_path / "sal.csv", tmp_path / "sel.json"
    capsys.readouterr()
    assert cli.main(["infer", "--image", str(d / "img_00000.tdw"), "--tau", "0.999", *models,
                     "--dump-saliency", str(sal), "--dump-selection", str(sel)]) == 0
    pred = json.loads(capsys.readouterr().out)
    assert "label" not in pred
    grid = np.loadtxt(sal, delimiter=",")
    assert grid.shape == (4, 4) and grid.min() >= 0 and grid.max() <= 1
    keep = json.loads(sel.read_text())
    assert keep == pred["keep_indices"] and len(keep) == pred["kept_tokens"]

    out = tmp_path / "eval"
    assert cli.main(["eval", "--data", str(d), *models, "--out", str(out), "--tau", "0.5"]) == 0
    assert len((out / "samples.jsonl").read_text().splitlines()) == 40
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert len(rows) == 1 and float(rows[0]["tau"]) == 0.5

    sw = tmp_path / "sweep.csv"
    assert cli.main(["sweep", "--data", str(d), *models, "--out", str(sw), "--tau", "0.5,0.9",
                     "--gamma", "0.5,1"]) == 0
    assert len(sw.read_text().splitlines()) == 5

    capsys.readouterr()
    assert cli.main(["flops", *models, "--keep", "4,16"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["target_at_keep"]["16"] == rep["target_full"]
    assert rep["target_at_keep"]["4"] < rep["target_full"]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "tinydrop", "eval", "--tau", "2"], capture_output=True, text=True)
    assert res.returncode == 2 and "--tau" in res.stderr


def test_gen_data_is_byte_stable(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["gen-data", "--n", "5", "--seed", "7", "--out", str(tmp_path / name)]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
