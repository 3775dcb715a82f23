"""One test per acceptance criterion; each prints a PASS/FAIL line."""
import json
import time

import numpy as np

from carmarkov.algebra import ChainWindow, car_checks
from carmarkov.cli import main
from carmarkov.families import build_family
from carmarkov.markov_state import (build_state, closed_form_adjudication, corrupted_amplitudes, hopping_amplitudes,
                                   ising_amplitudes, save_sequence, verify_amplitudes, verify_markov)
from carmarkov.structure import disintegrate_reconstruct, markov_structure_checks
from carmarkov.suites import (classify, controls_suite, expectations_suite, hamiltonian_suite, mixing_suite,
                              predicted_pattern)

C = 0.5
H_GRID = (0.0, 0.3, -0.3, 0.7, -0.7, 1.2)
COEFFS = ((1, 0, 0, 1), (2, 1, 1, 2), (C, C, C, C))
FAMILY_PARAMS = {
    "trivial": {},
    "product": {"occupations": [0.2, 0.55, 0.7, 0.35, 0.6]},
    "ising": {"alpha": 2, "beta": 1, "gamma": 1, "delta": 2, "h": 0.3},
    "two_block": {},
    "hopping": {"h": 0.7},
}


def _report(n, ok, detail):
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")


def _worst(records, prefixes):
    vals = [r.residual for r in records if r.kind == "check" and r.check.startswith(prefixes)]
    return max(vals) if vals else float("nan")


def _family(name, L):
    p = dict(FAMILY_PARAMS[name])
    if name == "product":
        p["occupations"] = p["occupations"][:L]
    return build_family(name, L, p)


def test_criterion_1_car_relations():
    t0 = time.perf_counter()
    worst = max(r.residual for L in range(1, 6) for r in car_checks(ChainWindow(-(L - 1), L)))
    dt = time.perf_counter() - t0
    ok = worst < 1e-12 and dt < 5
    _report(1, ok, f"max residual {worst:.2e}, {dt:.2f}s")
    assert ok


def test_criterion_2_conditional_expectations():
    rng = np.random.default_rng(0)
    fam = build_family("ising", 5, FAMILY_PARAMS["ising"])
    t0 = time.perf_counter()
    recs, _ = expectations_suite(fam, rng, {})
    ctrl, _ = controls_suite(fam, rng, {})
    dt = time.perf_counter() - t0
    props = (":idempotence", ":unitality", ":bimodule", ":preservation", ":choi")
    worst = max(r.residual for r in recs if r.check.endswith(props))
    transpose = [r for r in ctrl if r.check == "control:transpose-choi"][0]
    ok = worst < 1e-9 and all(r.passed for r in recs if r.gating) and transpose.passed and dt < 30
    _report(2, ok, f"max residual {worst:.2e}, transpose min eigenvalue {-transpose.residual:.2e}, {dt:.1f}s")
    assert ok


def _construction_records(seq, full):
    rep = build_state(seq)
    rng = np.random.default_rng(1)
    recs = verify_amplitudes(seq) + list(rep.compatibility)
    recs += verify_markov(rep, rng, sample=None if full else 256, choi=False)
    return recs


def test_criterion_3_construction():
    seqs = [(f"ising{c} h={h}", lambda L, c=c, h=h: ising_amplitudes(*c, h, L)) for c in COEFFS for h in H_GRID]
    seqs += [(f"hopping h={h}", lambda L, h=h: hopping_amplitudes(h, L)) for h in H_GRID]
    t0 = time.perf_counter()
    w4 = max(_worst(_construction_records(make(4), True), ("amplitudes:", "build:", "markov:")) for _, make in seqs)
    dt4 = time.perf_counter() - t0
    w5 = max(_worst(_construction_records(make(5), False), ("amplitudes:", "build:", "markov:")) for _, make in seqs)
    ok = w4 < 1e-9 and w5 < 1e-9 and dt4 < 60
    _report(3, ok, f"{len(seqs)} parameter sets, L=4 full {w4:.2e} ({dt4:.1f}s), L=5 sampled {w5:.2e}")
    assert ok


def test_criterion_4_closed_form():
    adj = closed_form_adjudication(0.7)
    ok = adj["hyperbolic_residual"] < 1e-12 and adj["trigonometric_residual"] > 1e-2
    _report(4, ok, f"hyperbolic {adj['hyperbolic_residual']:.2e}, trigonometric {adj['trigonometric_residual']:.2e}")
    assert ok


def test_criterion_5_structure():
    lines, ok = [], True
    for name in ("trivial", "product", "ising", "two_block"):
        fam = _family(name, 4)
        rc, _ = classify(fam)
        rng = np.random.default_rng(2)
        mrecs = markov_structure_checks(fam.state, rc, rng=rng)
        drecs, _ = disintegrate_reconstruct(fam.state, rc, rng=rng)
        recs = list(rc.records) + mrecs + drecs
        match = rc.pattern == predicted_pattern(fam)
        rt = _worst(drecs, ("structure:reconstruction", "structure:disintegration"))
        lift = _worst(drecs, ("structure:lift-invariance",))
        even = _worst(mrecs, ("structure:evenness",))
        good = (match and rt < 1e-9 and lift < 1e-10 and even < 1e-10
                and all(r.passed for r in recs if r.gating))
        ok &= good
        lines.append(f"{name} {'/'.join(rc.pattern)} round-trip {rt:.1e} lift {lift:.1e} odd {even:.1e}")
    _report(5, ok, "; ".join(lines))
    assert ok


def test_criterion_6_hamiltonian():
    lines, ok = [], True
    t0 = time.perf_counter()
    for name in ("trivial", "product", "ising", "two_block", "hopping"):
        for L in (3, 4, 5):
            fam = _family(name, L)
            recs, _ = hamiltonian_suite(fam, np.random.default_rng(3), {})
            dec = _worst(recs, ("hamiltonian:decomposition",))
            good = dec < 1e-8
            if name != "hopping":
                good &= _worst(recs, ("hamiltonian:commutation",)) < 1e-9
            good &= _worst(recs, ("kms:",)) < 1e-7
            if L == 5:
                good &= _worst(recs, ("cocycle:potential-difference", "cocycle:unitary",
                                      "cocycle:window-stability")) < 1e-7
            ok &= bool(good)
            if not good or L == 5:
                lines.append(f"{name} L={L} decomposition {dec:.1e}{'' if good else ' FAIL'}")
    dt = time.perf_counter() - t0
    ok &= dt < 60
    _report(6, ok, "; ".join(lines) + f"; {dt:.1f}s")
    assert ok


def test_criterion_7_mixing():
    t0 = time.perf_counter()
    recs, extra = mixing_suite(None, None, {"mixing": {"pi": [[0.9, 0.1], [0.1, 0.9]], "length": 7}})
    dt = time.perf_counter() - t0
    ratios = np.asarray(extra["ratios"][:4])
    dev = float(np.max(np.abs(ratios - 0.8) / 0.8))
    oracle = float(np.max(np.abs(np.asarray(extra["correlations"]) - np.asarray(extra["classical"]))))
    ok = dev < 0.05 and oracle < 1e-10 and dt < 60 and all(r.passed for r in recs if r.gating)
    _report(7, ok, f"ratios {np.round(ratios, 6).tolist()}, oracle {oracle:.1e}, {dt:.1f}s")
    assert ok


def test_criterion_8_determinism_cli_controls(tmp_path):
    args = ["run", "--family", "ising", "--alpha", "1", "--beta", "0", "--gamma", "0", "--delta", "1",
            "--h", "0.7", "--L", "4", "--seed", "11"]
    codes = [main(args + ["--out", str(tmp_path / f"r{i}.json")]) for i in range(2)]
    same = (tmp_path / "r0.json").read_bytes() == (tmp_path / "r1.json").read_bytes()
    save_sequence(corrupted_amplitudes(ising_amplitudes(1, 0, 0, 1, 0.7)), tmp_path / "bad")
    exits = {
        0: codes[0],
        1: main(["run", "--family", "hopping", "--h", "0.7", "--L", "4", "--suites", "structure",
                 "--out", str(tmp_path / "f.json")]),
        2: main(["run", "--family", "ising", "--alpha", "1", "--beta", "0", "--gamma", "0", "--delta", "0.5",
                 "--h", "0.4"]),
        3: main(["hamiltonian", "--family", "ising", "--alpha", "1", "--beta", "0", "--gamma", "0", "--delta", "1",
                 "--h", "40", "--L", "3", "--out", str(tmp_path / "h.json")]),
        4: main(["verify", "--path", str(tmp_path / "bad"), "--out", str(tmp_path / "v.json")]),
    }
    report = json.loads((tmp_path / "r0.json").read_text())
    ctrl = [r for r in report["suites"]["controls"] if r["kind"] == "control"]
    targets = {r["check"]: r["passed"] for r in ctrl}
    collateral = report["extras"]["controls"]["corrupted_amplitude_collateral"]
    ok = same and codes[0] == codes[1] and all(k == v for k, v in exits.items()) and len(ctrl) == 3 \
        and all(targets.values())
    _report(8, ok, f"deterministic {same}, exit codes {exits}, controls {targets}, "
                   f"corrupted-amplitude collateral {collateral}")
    assert ok
