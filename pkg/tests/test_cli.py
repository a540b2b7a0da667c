import csv
import os
import subprocess
import sys

import pytest
import yaml

from hecc.cli import (
    COMPARE_HEADER,
    CONVERGENCE_HEADER,
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_USAGE,
    ORACLE_HEADER,
    RUN_HEADER,
    SWEEP_HEADER,
    UsageError,
    fmt,
    main,
    parse_seeds,
    parse_sizes,
    parse_sweep,
)


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump({"num_ues": 3, "num_ess": 2, "num_services": 2, "frames": 2,
                                    "slots_per_frame": 1}))
    return str(path)


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_parse_seeds():
    assert parse_seeds("0-3") == [0, 1, 2, 3]
    assert parse_seeds("1,4,9") == [1, 4, 9]
    assert parse_seeds("0-1, 7") == [0, 1, 7]
    for bad in ("", "a", "3-1", "-2"):
        with pytest.raises(UsageError):
            parse_seeds(bad)


def test_parse_sizes_and_sweep():
    assert parse_sizes("8x2,10X4") == [(8, 2), (10, 4)]
    with pytest.raises(UsageError):
        parse_sizes("8by2")
    name, grid = parse_sweep("f_k:2e9:3.5e9:4")
    assert name == "es_rate" and grid == pytest.approx([2e9, 2.5e9, 3e9, 3.5e9])
    assert parse_sweep("E_max:1e-3:1e-3:1") == ("energy_cap", [1e-3])
    for bad in ("f_k:1:2", "num_ues:1:2:2", "nope:1:2:2", "f_k:1:2:0"):
        with pytest.raises(UsageError):
            parse_sweep(bad)


def test_fmt():
    assert fmt(True) == "1" and fmt(False) == "0"
    assert fmt(3) == "3" and fmt(0.1) == "0.1" and fmt("x") == "x"


@pytest.mark.parametrize(
    "argv",
    [
        ["bogus"],
        ["run", "--seeds", "x"],
        ["run", "--alpha", "-1"],
        ["compare", "--schemes", "PROPOSED"],
        ["run", "--schemes", "GREEDY"],
        ["sweep"],
        ["run", "--frames", "0"],
        ["run", "--config", "/nonexistent/file.yaml"],
    ],
)
def test_usage_errors_exit_one(argv, tmp_path):
    assert main([*argv, "--out", str(tmp_path)]) == EXIT_USAGE


def test_run_writes_trace(small_config, tmp_path, capsys):
    assert main(["run", "--config", small_config, "--seeds", "0-1", "--out", str(tmp_path)]) == EXIT_OK
    rows = _read(tmp_path / "run_trace.csv")
    assert tuple(rows[0]) == RUN_HEADER
    assert len(rows) == 1 + 2 * 2
    assert rows[1][2] == "PROPOSED" and rows[1][7] == "1"
    assert "run_trace.csv" in capsys.readouterr().out


def test_compare_and_sweep(small_config, tmp_path):
    out = str(tmp_path)
    argv = ["--config", small_config, "--frames", "1", "--out", out, "--schemes", "PROPOSED,EB"]
    assert main(["compare", *argv]) == EXIT_OK
    rows = _read(tmp_path / "compare.csv")
    assert tuple(rows[0]) == COMPARE_HEADER and {r[0] for r in rows[1:]} == {"PROPOSED", "EB"}
    assert main(["sweep", *argv, "--sweep", "f_k:2e9:3e9:2"]) == EXIT_OK
    rows = _read(tmp_path / "sweep.csv")
    assert tuple(rows[0]) == SWEEP_HEADER
    assert {float(r[1]) for r in rows[1:]} == {2e9, 3e9}


def test_convergence_rows(small_config, tmp_path):
    argv = ["convergence", "--config", small_config, "--alpha", "1e4", "--sizes", "3x2", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    rows = _read(tmp_path / "convergence.csv")
    assert tuple(rows[0]) == CONVERGENCE_HEADER
    algs = {r[0] for r in rows[1:]}
    assert algs == {"alg2", "alg3"}


def test_oracle_gap(small_config, tmp_path):
    assert main(["oracle-gap", "--config", small_config, "--frames", "1", "--out", str(tmp_path)]) == EXIT_OK
    rows = _read(tmp_path / "oracle_gap.csv")
    assert tuple(rows[0]) == ORACLE_HEADER and len(rows) == 2
    assert float(rows[1][3]) >= -1e-9


def test_oracle_cap_exit_code(tmp_path, monkeypatch):
    from hecc import cli

    path = tmp_path / "big.yaml"
    path.write_text("num_ues: 12\nnum_ess: 4\nnum_services: 8\n")
    # too large to enumerate, so branch-and-bound runs and stops at the node limit
    monkeypatch.setattr(cli, "ORACLE_NODE_LIMIT", 1)
    argv = ["oracle-gap", "--config", str(path), "--frames", "1", "--out", str(tmp_path)]
    assert main(argv) == EXIT_RUNTIME


def test_byte_identical_runs(small_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["run", "--config", small_config, "--seeds", "3", "--out", str(out)]) == EXIT_OK
    assert (a / "run_trace.csv").read_bytes() == (b / "run_trace.csv").read_bytes()


def test_module_entry_point(small_config, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hecc", "run", "--config", small_config, "--frames", "1",
                           "--out", str(tmp_path)], capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert os.path.exists(tmp_path / "run_trace.csv")
