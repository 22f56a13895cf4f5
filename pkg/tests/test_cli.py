import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from artifact import checks
from artifact.cli import main
from artifact.verify import StatReport


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def _endpoint(path):
    r = _rows(path)[-1]
    return complex(float(r["x"]), float(r["y"]))


@pytest.fixture
def runner(monkeypatch):
    monkeypatch.delenv("LEVELLINE_SEED", raising=False)
    return CliRunner()


def test_trace_files_and_rerun(runner, tmp_path):
    out = [str(tmp_path / p) for p in ("a", "b")]
    for o in out:
        res = runner.invoke(main, ["trace", "--weights", "", "--horizon", "1", "--seed", "7", "--out", o])
        assert res.exit_code == 0, res.output
    for suffix in ("_driver.csv", "_trace.csv", ".svg"):
        assert (tmp_path / ("a" + suffix)).exists()
    assert abs(_endpoint(out[0] + "_trace.csv") - _endpoint(out[1] + "_trace.csv")) < 0.05
    head = open(out[0] + "_driver.csv").readline()
    assert head.startswith("# command: trace")


def test_gff_rerun_identical(runner, tmp_path):
    args = ["gff", "--grid", "64", "--boundary", "plusminus", "--seed", "3", "--out", str(tmp_path / "g")]
    assert runner.invoke(main, args).exit_code == 0
    first = (tmp_path / "g_field.csv").read_bytes()
    assert runner.invoke(main, args).exit_code == 0
    assert (tmp_path / "g_field.csv").read_bytes() == first
    assert b'"seed": 3' in first


def test_env_seed_fallback(runner, tmp_path):
    args = ["gff", "--grid", "16", "--out"]
    r1 = runner.invoke(main, args + [str(tmp_path / "e")], env={"LEVELLINE_SEED": "5"})
    r2 = runner.invoke(main, args + [str(tmp_path / "f"), "--seed", "5"])
    assert r1.exit_code == r2.exit_code == 0
    a = [r["value"] for r in _rows(tmp_path / "e_field.csv")]
    b = [r["value"] for r in _rows(tmp_path / "f_field.csv")]
    assert a == b


def test_config_file_wins_and_unknown_key(runner, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"grid": 12, "seed": 2}))
    res = runner.invoke(main, ["gff", "--grid", "20", "--config", str(cfg), "--out", str(tmp_path / "h")])
    assert res.exit_code == 0
    assert "overrides --grid" in res.output
    assert len(_rows(tmp_path / "h_field.csv")) == 14 * 14
    cfg.write_text(json.dumps({"gird": 12}))
    res = runner.invoke(main, ["gff", "--config", str(cfg)])
    assert res.exit_code == 2 and "gird" in res.output


def test_invalid_values_name_the_key(runner):
    res = runner.invoke(main, ["trace", "--horizon", "-1"])
    assert res.exit_code == 2 and "horizon" in res.output
    res = runner.invoke(main, ["trace", "--weights", "X:1"])
    assert res.exit_code == 2 and "weights" in res.output
    res = runner.invoke(main, ["explore", "--r", "1.5"])
    assert res.exit_code == 2 and "'r'" in res.output


def test_explore_tree(runner, tmp_path):
    out = str(tmp_path / "t")
    res = runner.invoke(main, ["explore", "--grid", "32", "--targets", "0.5+0.5j;0.3+0.6j", "--seed", "2",
                               "--out", out])
    assert res.exit_code == 0, res.output
    body = json.load(open(out + ".json"))
    assert body["header"]["command"] == "explore"
    assert len(body["result"]["targets"]) == 2
    assert (tmp_path / "t.svg").read_text().lstrip().startswith("<?xml")


def test_verify_exit_codes(runner, tmp_path, monkeypatch):
    out = str(tmp_path / "v")
    res = runner.invoke(main, ["verify", "--suite", "smoke-c01-loewner-closed-form", "--out", out])
    assert res.exit_code == 0
    assert "PASS smoke-c01-loewner-closed-form" in res.output
    assert _rows(out + ".csv")[0]["passed"] == "True"
    monkeypatch.setitem(checks.REGISTRY, "always-fails", lambda seed: StatReport("always-fails", 1, 0.0))
    res = runner.invoke(main, ["verify", "--suite", "always-fails", "--out", out])
    assert res.exit_code == 1
    res = runner.invoke(main, ["verify", "--suite", "no-such-check"])
    assert res.exit_code == 2
    res = runner.invoke(main, ["verify", "--suite", "empty", "--out", out])
    assert res.exit_code == 0
