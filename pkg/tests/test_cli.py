import csv
import json

import pytest

from carmarkov.cli import main
from carmarkov.markov_state import corrupted_amplitudes, ising_amplitudes, save_sequence


def _run(tmp_path, *argv, name="report.json"):
    out = tmp_path / name
    code = main([*argv, "--out", str(out)])
    return code, (json.loads(out.read_text()) if out.exists() else None)


def test_run_passes_and_is_deterministic(tmp_path):
    args = ("run", "--family", "ising", "--alpha", "2", "--beta", "1", "--gamma", "1", "--delta", "2",
            "--h", "0.3", "--L", "4", "--seed", "3")
    c1, r1 = _run(tmp_path, *args, name="a.json")
    c2, _ = _run(tmp_path, *args, name="b.json")
    assert c1 == c2 == 0 and r1["status"] == "pass"
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_failed_check_exit_code(tmp_path):
    code, rep = _run(tmp_path, "run", "--family", "hopping", "--h", "0.7", "--L", "4", "--suites", "structure")
    assert code == 1 and rep["status"] == "fail"
    assert rep["summary"]["failures"]


def test_config_errors(tmp_path, capsys):
    assert main(["run", "--family", "ising", "--alpha", "1", "--beta", "0", "--gamma", "0", "--delta", "0.5",
                 "--h", "0.4"]) == 2
    assert main(["run", "--family", "trivial", "--L", "0"]) == 2
    assert main(["run", "--family", "trivial", "--suites", "nope"]) == 2


def test_faithfulness_exit_code(tmp_path):
    code, _ = _run(tmp_path, "hamiltonian", "--family", "ising", "--alpha", "1", "--beta", "0", "--gamma", "0",
                   "--delta", "1", "--h", "40", "--L", "3")
    assert code == 3


def test_invariant_exit_code(tmp_path):
    save_sequence(corrupted_amplitudes(ising_amplitudes(1, 0, 0, 1, 0.7)), tmp_path / "bad")
    code, _ = _run(tmp_path, "verify", "--path", str(tmp_path / "bad"))
    assert code == 4


def test_demo_and_verify_round_trip(tmp_path):
    argv = ["demo", "--family", "ising", "--alpha", "1", "--beta", "0", "--gamma", "0", "--delta", "1",
            "--h", "0.7", "--L", "4"]
    assert main(argv + ["--dir", str(tmp_path / "d1")]) == 0
    assert main(argv + ["--dir", str(tmp_path / "d2")]) == 0
    for f in (tmp_path / "d1").iterdir():
        assert f.read_bytes() == (tmp_path / "d2" / f.name).read_bytes()
    code, rep = _run(tmp_path, "verify", "--path", str(tmp_path / "d1"))
    assert code == 0
    assert rep["suites"]["files"][0]["residual"] == 0.0


def test_demo_of_state_family(tmp_path):
    assert main(["demo", "--family", "two_block", "--L", "4", "--dir", str(tmp_path)]) == 0
    assert (tmp_path / "manifest.json").exists()


def test_csv_outputs(tmp_path):
    path = tmp_path / "corr.csv"
    assert main(["correlations", "--pi", "0.9,0.1;0.1,0.9", "--length", "5", "--csv", str(path),
                 "--out", str(tmp_path / "c.json")]) == 0
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["r", "quantum", "classical"] and len(rows) > 2
    for _, q, c in rows[1:]:
        assert abs(float(q) - float(c)) < 1e-12
    path = tmp_path / "chain.csv"
    assert main(["disintegrate", "--family", "ising", "--alpha", "1", "--beta", "0", "--gamma", "0", "--delta", "1",
                 "--h", "0.7", "--L", "4", "--csv", str(path), "--out", str(tmp_path / "d.json")]) == 0
    rows = list(csv.reader(path.open()))
    assert rows[0][0] == "j" and len(rows) > 1


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("family: ising\nL: 3\nparams: {alpha: 1, beta: 0, gamma: 0, delta: 1, h: 0.7}\n"
                   "suites: algebra,build\n")
    code, rep = _run(tmp_path, "run", "--config", str(cfg), "--h", "0.2")
    assert code == 0
    assert rep["environment"]["params"]["h"] == 0.2
    assert set(rep["suites"]) == {"algebra", "build"}


@pytest.mark.parametrize("spec", ["markov:=1e-30"])
def test_tolerance_override_can_fail_a_run(tmp_path, spec):
    code, rep = _run(tmp_path, "run", "--family", "ising", "--alpha", "1", "--beta", "0", "--gamma", "0",
                     "--delta", "1", "--h", "0.7", "--L", "3", "--suites", "markov", "--tol", spec)
    assert code in (0, 1)
    assert all(r["tolerance"] == 1e-30 for r in rep["suites"]["markov"] if r["check"].startswith("markov:"))
