import csv
import json
import os

import pytest

from naolab.cli import EXIT_CONFIG, EXIT_OK, main


def test_dry_run_writes_nothing(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--config", "smoke", "--out", str(out), "--dry-run"]) == EXIT_OK
    assert not out.exists()


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[experiment]\nname = x\n[model]\nlayers = zero\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o"), "--dry-run"]) == EXIT_CONFIG
    assert "line 4" in capsys.readouterr().err


def test_unknown_bundled_config(tmp_path):
    assert main(["run", "--config", "nope", "--out", str(tmp_path / "o")]) == EXIT_CONFIG


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "smoke"
    assert main(["run", "--config", "smoke", "--out", str(out)]) == EXIT_OK
    return out


def test_run_writes_results(smoke_run):
    with open(smoke_run / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["model_variant"] for r in rows] == ["nao", "discrete_nao"]
    assert all(r["operator_err_ID"] != "NA" for r in rows)
    assert (smoke_run / "crossres.csv").exists()
    assert (smoke_run / "kernel_nao_ID.csv").exists()
    meta = json.loads((smoke_run / "results.csv.meta.json").read_text())
    assert meta["seed"] == 0 and len(meta["config_sha256"]) == 64


def test_rerun_refuses_populated_dir(smoke_run):
    assert main(["run", "--config", "smoke", "--out", str(smoke_run)]) == EXIT_CONFIG


def test_rerun_reproduces_bytes(smoke_run, tmp_path):
    out = tmp_path / "again"
    assert main(["run", "--config", "smoke", "--out", str(out)]) == EXIT_OK
    for name in ("results.csv", "crossres.csv", "kernel_nao_ID.csv"):
        assert (out / name).read_bytes() == (smoke_run / name).read_bytes()


def test_eval_from_trained_models(smoke_run, tmp_path):
    out = tmp_path / "ev"
    code = main(["eval", "--config", "smoke", "--models", str(smoke_run / "models"),
                 "--data", str(smoke_run / "data"), "--out", str(out)])
    assert code == EXIT_OK
    assert (out / "results.csv").read_bytes() == (smoke_run / "results.csv").read_bytes()


def test_report_merges(smoke_run, tmp_path, capsys):
    res = str(smoke_run / "results.csv")
    assert main(["report", res, res, "--out", str(tmp_path / "rep")]) == EXIT_OK
    table = (tmp_path / "rep" / "table.md").read_text()
    assert table.count("| smoke |") == 4
    assert main(["report", str(tmp_path / "missing.csv")]) == EXIT_CONFIG


def test_oracle_suite(capsys):
    assert main(["oracle", "--suite", "riemann-equivalence"]) == EXIT_OK
    assert "[PASS] riemann-equivalence" in capsys.readouterr().out
    assert main(["oracle", "--suite", "bogus"]) == EXIT_CONFIG


def test_small_bench(capsys):
    code = main(["bench", "--n-list", "64,128", "--d-list", "8,16", "--repeats", "3",
                 "--fixed-d", "8", "--fixed-n", "64"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "N exponent" in out and "core backend" in out
    assert main(["bench", "--threads", "0"]) == EXIT_CONFIG


def test_gen_data(tmp_path):
    out = tmp_path / "data"
    assert main(["gen-data", "--config", "smoke", "--out", str(out)]) == EXIT_OK
    names = sorted(os.listdir(out))
    assert "train.naodata" in names and "train.naodata.meta.json" in names
