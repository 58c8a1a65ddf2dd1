import os

import pytest

from chunknet.harness import load_spec
from chunknet.harness.cli import EXIT_NONQUIESCENT, EXIT_OK, EXIT_SPEC, main, sweep_specs
from chunknet.harness.config import SpecError

SMALL = ["--set", "topology.k=4", "--set", "workload.bytes_per_host=200000", "--set", "workload.msg_size=100000",
         "--set", "transport.n_paths=4"]


def test_run_ok(tmp_path, capsys):
    assert main(["run", "--out", str(tmp_path)] + SMALL) == EXIT_OK
    out = capsys.readouterr().out
    assert "slowdown=" in out
    (d,) = os.listdir(tmp_path)
    assert set(os.listdir(tmp_path / d)) >= {"flows.csv", "summary.json"}


def test_bad_spec_exit_code(tmp_path, capsys):
    assert main(["run", "--out", str(tmp_path), "--set", "topology.k=5"]) == EXIT_SPEC
    assert "invalid spec" in capsys.readouterr().err
    assert main(["run", "--spec", str(tmp_path / "missing.ini")]) == EXIT_SPEC


def test_nonquiescent_exit_code(tmp_path):
    assert main(["run", "--out", str(tmp_path), "--set", "run.cutoff_factor=0.2"] + SMALL) == EXIT_NONQUIESCENT


def test_sweep_rows_and_vary(tmp_path, capsys):
    rows = tmp_path / "rows.ini"
    rows.write_text("[a]\ntransport.chunk_size = 4096\n[b]\ntransport.chunk_size = 16384\n")
    specs = sweep_specs(load_spec(None, []), [("a", ["transport.chunk_size=4096"]), ("b", [])],
                        ["transport.lb=ecn,rtt"])
    assert [label for label, _ in specs] == ["a transport.lb=ecn", "a transport.lb=rtt",
                                             "b transport.lb=ecn", "b transport.lb=rtt"]
    assert specs[0][1].transport.chunk_size == 4096 and specs[1][1].transport.lb == "rtt"
    with pytest.raises(SpecError):
        sweep_specs(load_spec(None, []), vary=["transport.lb"])
    code = main(["sweep", "--out", str(tmp_path / "r"), "--rows", str(rows), "--vary", "transport.lb=ecn,rtt"] + SMALL)
    assert code == EXIT_OK
    assert len(capsys.readouterr().out.strip().splitlines()) == 4
    assert len(os.listdir(tmp_path / "r")) == 4


def test_ccdf_command(tmp_path, capsys):
    main(["run", "--out", str(tmp_path)] + SMALL)
    (d,) = os.listdir(tmp_path)
    capsys.readouterr()
    assert main(["ccdf", str(tmp_path / d)]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "fct_ns,ccdf" and float(lines[1].split(",")[1]) == 1.0
    assert main(["ccdf", str(tmp_path / d), "--kind", "nope"]) == EXIT_SPEC
