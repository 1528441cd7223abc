"""Command-line surface: exit codes, formats, determinism."""

import os

import numpy as np
import pytest

from hirivit.cli import main
from hirivit.config import serialize_config
from hirivit.params import load_checkpoint
from hirivit.zoo import hiri_micro_config


def test_analyze_table(capsys):
    assert main(["analyze", "--variant", "S", "--res", "224,448"]) == 0
    out = capsys.readouterr().out
    lines = [ln for ln in out.splitlines() if ln.strip()]
    assert len(lines) == 3
    assert "S" in lines[1]
    # params column identical across resolutions
    p224 = lines[1].split()[2]
    p448 = lines[2].split()[2]
    assert p224 == p448


def test_analyze_csv_parses(capsys):
    assert main(["analyze", "--variant", "S", "--res", "224", "--format", "csv"]) == 0
    out = capsys.readouterr().out
    header, row = out.strip().splitlines()
    assert header == "variant,resolution,params,gflops,ratio"
    fields = row.split(",")
    assert fields[0] == "S" and int(fields[1]) == 224
    assert float(fields[3]) > 0


def test_analyze_unknown_variant_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["analyze", "--variant", "Q"])
    assert exc.value.code == 2


def test_analyze_config_file(tmp_path, capsys):
    cfg_path = tmp_path / "micro.cfg"
    cfg_path.write_text(serialize_config(hiri_micro_config()))
    assert main(["analyze", "--config", str(cfg_path), "--res", "64",
                 "--format", "csv"]) == 0
    out = capsys.readouterr().out
    assert "hiri_micro" in out


def test_analyze_out_file(tmp_path):
    out_path = tmp_path / "report.csv"
    assert main(["analyze", "--variant", "S", "--res", "224", "--format", "csv",
                 "--out", str(out_path)]) == 0
    assert out_path.read_text().startswith("variant,")


def test_gradcheck_single_block(capsys):
    assert main(["gradcheck", "--block", "cffn"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "cffn" in out


def test_gradcheck_unknown_block(capsys):
    assert main(["gradcheck", "--block", "nope"]) == 2
    assert "error" in capsys.readouterr().err


def test_train_writes_artifacts(tmp_path, capsys):
    out_dir = str(tmp_path / "run")
    assert main(["train", "--steps", "5", "--seed", "11", "--out", out_dir]) == 0
    metrics = open(os.path.join(out_dir, "metrics.csv")).read().splitlines()
    assert metrics[0] == "step,loss,lr,train_acc"
    assert len(metrics) == 6
    student = load_checkpoint(os.path.join(out_dir, "student.hiri"))
    teacher = load_checkpoint(os.path.join(out_dir, "teacher.hiri"))
    assert student.paths() == teacher.paths()


def test_train_deterministic_per_seed(tmp_path):
    outs = []
    for name in ("a", "b"):
        out_dir = str(tmp_path / name)
        assert main(["train", "--steps", "4", "--seed", "7", "--out", out_dir]) == 0
        outs.append(open(os.path.join(out_dir, "metrics.csv")).read())
    assert outs[0] == outs[1]
    ta = load_checkpoint(str(tmp_path / "a" / "student.hiri"))
    tb = load_checkpoint(str(tmp_path / "b" / "student.hiri"))
    assert all(np.array_equal(ta[p].data, tb[p].data) for p in ta.paths())


def test_verify_tables_passes(capsys):
    assert main(["verify-tables"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert out.count("PASS") >= 19
