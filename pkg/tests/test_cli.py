import json
from pathlib import Path

import pytest

from poissonbell import cli

SPECS = Path(__file__).resolve().parents[1] / "specs"


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_kernel_strip(tmp_path, capsys):
    assert run("kernel", "--spec", SPECS / "strip.json", "--y", 0.5, "--out", tmp_path) == 0
    csv = (tmp_path / "kernel-y0.5.csv").read_text().splitlines()
    assert "mass=0.5," in csv[0]
    man = json.loads((tmp_path / "manifest-kernel.json").read_text())
    # the CSV header references the manifest hash
    assert f"spec={man['hash']}" in csv[0]
    assert man["tolerances"]["tail_tol"] == 1e-10


def test_kernel_cauchy_bellshape(tmp_path, capsys):
    assert run("kernel", "--spec", SPECS / "half-plane.json", "--y", 1, "--bellshape", 6, "--t", 1e-3, "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "shape-y1.json").read_text())
    assert rep["counts"] == [[0, 1, 2, 3, 4, 5, 6]]
    assert rep["verdict"] == "pass"
    assert "manifest" in rep


def test_missing_spec_exit_2(tmp_path, capsys):
    assert run("kernel", "--spec", tmp_path / "nope.json", "--y", 0.5, "--out", tmp_path) == 2


def test_malformed_spec_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"R": 1, "family": {"name": "unknown"}}')
    assert run("rogers", "--spec", bad, "--out", tmp_path) == 2
    bad.write_text("{not json")
    assert run("rogers", "--spec", bad, "--out", tmp_path) == 2


def test_solver_failure_exit_3(tmp_path, capsys):
    # the atom spec has no density without smoothing
    assert run("kernel", "--spec", SPECS / "atom.json", "--y", 0.5, "--t", 0, "--out", tmp_path) == 3


def test_verify_factorization(tmp_path, capsys):
    assert run("verify-factorization", "--spec", SPECS / "strip.json", "--split", 0.25, 0.5, "--out", tmp_path) == 0
    d = json.loads((tmp_path / "factorization.json").read_text())
    assert d["passed"] and len(d["reports"]) == 2


def test_verify_bellshape(tmp_path, capsys):
    assert run("verify-bellshape", "--spec", SPECS / "strip.json", "--y", 0.5, "--n-max", 4, "--out", tmp_path) == 0


def test_closed_form(tmp_path, capsys):
    assert run("closed-form", "--family", "cs", "--params", "alpha=0.5,y=1", "--out", tmp_path) == 0
    lines = (tmp_path / "closed-cs.csv").read_text().splitlines()
    assert lines[1] == "x,value" and len(lines) == 2003
    assert run("closed-form", "--family", "cs", "--params", "y=1", "--out", tmp_path) == 2
    assert run("closed-form", "--family", "homogeneous", "--params", "p=1,q=0,mu=2.5", "--out", tmp_path) == 2


def test_rogers_with_resolvent(tmp_path, capsys):
    assert run("rogers", "--spec", SPECS / "strip.json", "--resolvent", "--out", tmp_path) == 0
    d = json.loads((tmp_path / "rogers.json").read_text())
    assert d["resolvent"]["psi0"] == pytest.approx(0.5, abs=1e-6)


def test_verify_and_fault_injection(tmp_path, capsys):
    assert run("verify", "--spec", SPECS / "strip.json", "--out", tmp_path / "a") == 0
    assert run("verify", "--spec", SPECS / "strip.json", "--inject-fault", "--out", tmp_path / "b") == 4
    d = json.loads((tmp_path / "b" / "verify.json").read_text())
    assert d["fault_injected"] and not d["results"]["factorization"]


def test_simulate_zero_paths_exit_2(tmp_path, capsys):
    assert run("simulate", "--spec", SPECS / "strip.json", "--y0", 0.5, "--paths", 0, "--out", tmp_path) == 2


def test_simulate_reproducible(tmp_path, capsys):
    args = ["simulate", "--spec", SPECS / "strip.json", "--y0", 0.5, "--paths", 2000, "--dt", 1e-3, "--seed", 7]
    assert run(*args, "--workers", 1, "--out", tmp_path / "a") in (0, 4)
    assert run(*args, "--workers", 2, "--out", tmp_path / "b") in (0, 4)
    for name in ("summary.json", "samples.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    s = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert s["paths"] == 2000 and "charfn" in s and "ks" in s


def test_env_worker_default(monkeypatch):
    from poissonbell import montecarlo

    monkeypatch.setenv("POISSONBELL_WORKERS", "3")
    assert montecarlo.default_workers() == 3


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        run("--version")
    assert e.value.code == 0
