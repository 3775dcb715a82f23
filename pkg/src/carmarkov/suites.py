"""Verification suites run by the command line front end.

Each suite takes a ``Family`` and a seeded generator and returns check
records plus a dictionary of extra report data.
"""
import numpy as np

from .algebra import ChainWindow, car_checks
from .errors import ClassificationError
from .expectations import (choi_check, diagonal_lift_expectation, ergodic_average, expectation_checks,
                           hs_conditional_expectation, parity_average, segment_basis, segment_expectation,
                           structure_decompose, transpose_map)
from .hamiltonian import (build_terms, cocycle_locality, decomposition_obstruction, dynamics_checks, kms_checks,
                          local_potential, potential_checks, verify_commutations, verify_decomposition)
from .markov_state import (build_state, corrupted_amplitudes, quasi_conditional_expectation, trivial_amplitudes,
                           verify_amplitudes, verify_markov)
from .records import CheckRecord
from .structure import (EVEN, FULL, classify_state, correlation_decay, disintegrate_reconstruct,
                        odd_annihilation_residual, markov_structure_checks, product_state_checks, theta_broken_expectation,
                        trivial_state)

SUITES = ("algebra", "expectations", "build", "markov", "structure", "hamiltonian", "mixing", "controls")
CHOI_MAX_LENGTH = 5
FULL_BASIS_MAX_LENGTH = 4
DEFAULT_PI = [[0.9, 0.1], [0.1, 0.9]]


def default_suites(family):
    """Suites that apply to the family; structure-level suites need a Markov state."""
    out = ["algebra", "expectations"]
    if family.rep is not None:
        out += ["build", "markov"]
    if family.name != "hopping":
        out += ["structure", "hamiltonian"]
    return out + ["mixing", "controls"]


def algebra_suite(family, rng, cfg):
    return car_checks(family.window), {}


def expectations_suite(family, rng, cfg):
    w = family.window
    sites = w.sites
    mid = sites[len(sites) // 2]
    choi = w.length <= CHOI_MAX_LENGTH
    maps = [segment_expectation(w, kind, arg) for kind, arg in (
        ("initial_up_to", mid), ("final_from", mid), ("single", sites[0]), ("pair", sites[0]),
        ("even_part_of", sites), ("diagonal_of", sites), ("full_region", (sites[0], sites[-1])),
        ("scalars", None), ("full", None))]
    maps.append(diagonal_lift_expectation(w, sites[::2]))
    maps.append(parity_average(w))
    recs = []
    for E in maps:
        recs += expectation_checks(E, rng, choi=choi, anchor="expectations:conditional-expectation")
    single = segment_basis(w, "single", sites[0])
    # the corner decomposition is of a single-site map; a short window keeps the commutant small
    small = ChainWindow(w.first_site, min(w.length, 3))
    diag = hs_conditional_expectation(segment_basis(small, "diagonal_of", (sites[0],)))
    dec = structure_decompose(diag, rng)
    recs.append(CheckRecord("expectations:structure-decomposition", "expectations:central-decomposition",
                            dec["factor_residual"], 1e-9, detail=f"corners {dec['corner_dimensions']}"))
    erg = ergodic_average(parity_average(w), single, label="parity-ergodic")
    recs.append(CheckRecord("expectations:ergodic-cesaro", "expectations:ergodic-limit", erg.cesaro_gap, 1e-8))
    extra = {"ergodic_parity_fixed_dim": erg.fixed_dim}
    if family.rep is not None and w.length >= 2:
        n = sites[len(sites) // 2 - 1] if len(sites) > 2 else sites[0]
        e = ergodic_average(quasi_conditional_expectation(family.rep, n), segment_basis(w, "pair", n),
                            label="transition-ergodic")
        recs.append(CheckRecord("expectations:transition-cesaro", "expectations:ergodic-limit", e.cesaro_gap, 1e-8,
                                detail=f"site {n}, fixed dimension {e.fixed_dim}"))
        recs.append(CheckRecord("expectations:transition-cesaro-plain", "expectations:ergodic-limit",
                                e.cesaro_plain_gap, 1e-8, kind="info"))
    return recs, extra


def build_suite(family, rng, cfg):
    recs = verify_amplitudes(family.seq) + list(family.rep.compatibility)
    p = family.seq.params
    extra = {"params": {k: v for k, v in p.items()}}
    if "closed_form_residual" in p:
        recs.append(CheckRecord("build:ising-closed-form", "markov:ising-amplitude", p["closed_form_residual"], 1e-12))
    if "hyperbolic_residual" in p:
        recs.append(CheckRecord("build:hopping-closed-form-hyperbolic", "markov:hopping-closed-form",
                                p["hyperbolic_residual"], 1e-12))
        recs.append(CheckRecord("build:hopping-closed-form-trigonometric", "markov:hopping-closed-form",
                                p["trigonometric_residual"], 1e-2, kind="control",
                                detail="sin/cos variant must differ from the exponential"))
        recs.append(CheckRecord("build:hopping-normalizer", "markov:hopping-closed-form",
                                abs(p["alpha_norm"] - p["normalizer_hyperbolic"]), 1e-12,
                                detail="numeric normalizer against (1 + cosh h) / 2"))
        recs.append(CheckRecord("build:hopping-normalizer-printed", "markov:hopping-closed-form",
                                abs(p["alpha_norm"] - p["normalizer_printed"]), 1e-12, kind="info",
                                detail="numeric normalizer against (1 + cos h) / 2"))
    return recs, extra


def markov_suite(family, rng, cfg):
    w = family.window
    sample = None if w.length <= FULL_BASIS_MAX_LENGTH else cfg.get("sample", 256)
    recs = verify_markov(family.rep, rng, sample=sample, choi=w.length <= CHOI_MAX_LENGTH)
    return recs, {"monomial_sample": sample}


def predicted_pattern(family):
    """Range classes expected from the construction, or None when there is no prediction."""
    L = family.window.length
    if family.name == "trivial":
        return (FULL,) * L
    if family.name in ("product", "two_block"):
        return tuple(family.demo.expected)
    if family.name == "ising":
        p = family.params
        degenerate = float(p["h"]) * (float(p["alpha"]) - float(p["beta"])) == 0
        return (FULL,) * L if degenerate else (EVEN,) * (L - 1) + (FULL,)
    return None


def classify(family):
    """Range classes; a non-Markov constructed state falls back to the density route."""
    try:
        return classify_state(family.source), None
    except ClassificationError as exc:
        if family.rep is None:
            raise
        return classify_state(family.state), str(exc)


def structure_suite(family, rng, cfg):
    st = family.state
    try:
        rc = classify_state(family.source)
    except ClassificationError as exc:
        return [CheckRecord("structure:classification", "structure:range-class", float("inf"), 1e-9,
                            detail=str(exc))], {"classification_error": str(exc)}
    recs = list(rc.records)
    pred = predicted_pattern(family)
    if pred is not None:
        miss = sum(a != b for a, b in zip(pred, rc.pattern))
        recs.append(CheckRecord("structure:predicted-pattern", "structure:range-class", miss, 0.5,
                                detail=f"predicted {list(pred)}"))
    recs += markov_structure_checks(st, rc, rng=rng)
    drecs, det = disintegrate_reconstruct(st, rc, rng=rng)
    recs += drecs
    extra = {"classes": {str(k): v for k, v in rc.classes.items()}, "gamma": list(rc.gamma),
             "measure_size": len(det["measure"])}
    if not rc.gamma:
        period = 2 if family.name == "two_block" else 1
        recs += product_state_checks(st, rc, period)
    else:
        cd = det["classical"]
        extra["classical"] = [list(r) for r in cd.csv_rows()]
    extra["_classical_data"] = det["classical"]
    return recs, extra


def hamiltonian_suite(family, rng, cfg):
    st = family.state
    w = st.window
    rc, note = classify(family)
    recs = []
    if note:
        recs.append(CheckRecord("hamiltonian:classification-route", "hamiltonian:term-table", 0.0, 1.0,
                                kind="info", detail="density route used: " + note))
    _, prec = potential_checks(st)
    recs += prec
    terms = build_terms(st, rc)
    recs += terms.records
    dec, per = verify_decomposition(terms, st)
    recs.append(dec)
    recs.append(CheckRecord("hamiltonian:decomposition-obstruction", "hamiltonian:decomposition",
                            decomposition_obstruction(st), 1e-8, kind="info",
                            detail="h[k,l] - h[k,l-1] - h[k+1,l] + h[k+1,l-1]; nonzero rules out any nearest-neighbour split"))
    recs += verify_commutations(terms)
    recs += dynamics_checks(local_potential(st, w.sites), rng)
    recs += kms_checks(st, rng)
    if w.length >= 5:
        k, l = w.first_site + 1, w.last_site - 1
        recs += cocycle_locality(st, k, l)
        recs += cocycle_locality(st, k, l, perturbation=0.5)
    extra = {"cases": {str(j): list(c) for j, c in terms.cases.items()}, "notes": terms.notes,
             "decomposition": {f"[{a},{b}]": r for (a, b), r in per.items()}, "_terms": terms}
    return recs, extra


def mixing_suite(family, rng, cfg):
    mix = cfg.get("mixing", {}) or {}
    pi = np.asarray(mix.get("pi", DEFAULT_PI), float)
    length = int(mix.get("length", 7))
    res = correlation_decay(pi, length=length)
    recs = list(res["records"])
    lam2 = res["lambda2"]
    ratios = np.asarray(res["ratios"])[:4]
    if lam2 > 0:
        dev = float(np.nanmax(np.abs(ratios - lam2) / lam2))
        recs.append(CheckRecord("mixing:ratio-vs-lambda2", "mixing:exponential-mixing", dev, 0.05))
    extra = {"distances": res["distances"], "correlations": [float(c.real) for c in res["correlations"]],
             "classical": [float(c) for c in res["classical"]], "ratios": [float(r) for r in res["ratios"]],
             "lambda2": lam2, "fitted_rate": res["fitted_rate"], "constant": res["constant"],
             "pi": pi.tolist(), "length": length}
    return recs, extra


def _collateral(records, target):
    return sorted({r.check for r in records if r.gating and not r.passed and r.check != target})


def controls_suite(family, rng, cfg):
    """Negative controls; each record passes when its targeted check fails."""
    w = family.window
    L = w.length
    recs, extra = [], {}
    base = family.seq if family.seq is not None else trivial_amplitudes(L)
    bad = corrupted_amplitudes(base)
    rep = build_state(bad, strict=False)
    sample = None if L <= FULL_BASIS_MAX_LENGTH else cfg.get("sample", 256)
    mrecs = verify_amplitudes(bad) + rep.compatibility + verify_markov(rep, rng, sample=sample, choi=False)
    target = "markov:two-step-preservation"
    tr = [r for r in mrecs if r.check == target][0]
    recs.append(CheckRecord("control:corrupted-amplitude", tr.anchor, tr.residual, tr.tolerance, kind="control",
                            detail=f"targets {target}"))
    extra["corrupted_amplitude_collateral"] = _collateral(mrecs, target)
    tw = w if L <= CHOI_MAX_LENGTH else trivial_state(3).state.window
    c = choi_check(transpose_map(tw))
    recs.append(CheckRecord("control:transpose-choi", "expectations:complete-positivity",
                            max(-c["min_eigenvalue"], 0.0), 1e-9, kind="control", detail="targets choi"))
    eye = np.eye(tw.dim)
    t = transpose_map(tw)
    x = rng.normal(size=(tw.dim, tw.dim)) + 1j * rng.normal(size=(tw.dim, tw.dim))
    pos = x @ x.conj().T
    recs.append(CheckRecord("control:transpose-unitality", "expectations:complete-positivity",
                            float(np.abs(t(eye) - eye).max()), 1e-12, kind="info"))
    recs.append(CheckRecord("control:transpose-positivity", "expectations:complete-positivity",
                            max(-np.linalg.eigvalsh(t(pos))[0], 0.0), 1e-9, kind="info"))
    triv = trivial_state(max(L, 2))
    rc = classify_state(triv)
    n = triv.state.window.first_site
    eps = rc.expectations[n]
    broken = theta_broken_expectation(eps, n)
    recs.append(CheckRecord("control:theta-broken", "structure:odd-annihilation", odd_annihilation_residual(broken, n), 1e-3,
                            kind="control", detail="targets structure:odd-annihilation"))
    recs.append(CheckRecord("control:theta-intact", "structure:odd-annihilation", odd_annihilation_residual(eps, n), 1e-9,
                            kind="info"))
    return recs, extra


RUNNERS = {"algebra": algebra_suite, "expectations": expectations_suite, "build": build_suite,
           "markov": markov_suite, "structure": structure_suite, "hamiltonian": hamiltonian_suite,
           "mixing": mixing_suite, "controls": controls_suite}
NEEDS_REP = ("build", "markov")
