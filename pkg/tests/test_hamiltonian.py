import numpy as np
import pytest

from carmarkov.algebra import ChainWindow, StateDensity
from carmarkov.errors import FaithfulnessError
from carmarkov.hamiltonian import (build_terms, cocycle_locality, decomposition_obstruction, dynamics_checks,
                                   export_terms, finite_dynamics, kms_identity, local_potential, potential_checks,
                                   verify_commutations, verify_decomposition)
from carmarkov.markov_state import build_state, hopping_amplitudes, ising_amplitudes
from carmarkov.structure import classify_state, product_state, trivial_state, two_block_state


def test_trace_state_single_site_potential():
    st = trivial_state(3).state
    h = local_potential(st, [-1], local=True)
    assert np.abs(h - np.log(2) * np.eye(2)).max() < 1e-14


def test_pure_state_is_rejected():
    w = ChainWindow(0, 2)
    rho = np.zeros((4, 4))
    rho[0, 0] = 4.0
    with pytest.raises(FaithfulnessError):
        local_potential(StateDensity(w, rho, "unit_normalized_trace"), [0])


def test_ising_site_potential_is_minus_log_distribution():
    st = build_state(ising_amplitudes(2, 1, 1, 2, 0.3)).state
    h = local_potential(st, [-2], local=True)
    p = np.array([st.expect(m).real for m in (np.kron(np.kron(np.eye(2), np.diag([1, 0])), np.eye(4)),
                                              np.kron(np.kron(np.eye(2), np.diag([0, 1])), np.eye(4)))])
    assert np.abs(np.diag(h) + np.log(p)).max() < 1e-12
    assert np.abs(h - np.diag(np.diag(h))).max() < 1e-14


@pytest.mark.parametrize("src", [trivial_state(4), product_state([0.2, 0.5, 0.7, 0.4]), two_block_state(4),
                                 build_state(ising_amplitudes(1, 0, 0, 1, 0.7))],
                         ids=["trivial", "product", "two-block", "ising"])
def test_decomposition_and_commutations(src):
    st = src.state
    rc = classify_state(src)
    terms = build_terms(st, rc)
    assert all(r.passed for r in terms.records)
    rec, per = verify_decomposition(terms, st)
    assert rec.residual < 1e-8 and len(per) == 10
    assert all(r.passed for r in verify_commutations(terms))
    _, prec = potential_checks(st)
    assert all(r.passed for r in prec)


def test_trace_state_decomposition_is_log2_count():
    st = trivial_state(3).state
    terms = build_terms(st, classify_state(trivial_state(3)))
    h = terms.H[-2] + terms.bond[-2] + terms.bond[-1] + terms.Hhat[0]
    assert np.abs(h - 3 * np.log(2) * np.eye(8)).max() < 1e-12


def test_hopping_has_nonzero_obstruction():
    st = build_state(hopping_amplitudes(0.7)).state
    assert decomposition_obstruction(st) > 1e-3


def test_dynamics(rng):
    st = build_state(ising_amplitudes(1, 0, 0, 1, 0.7)).state
    h = local_potential(st, st.window.sites)
    x = rng.normal(size=(16, 16))
    assert np.abs(finite_dynamics(h, 0.0, x) - x).max() < 1e-14
    assert all(r.passed for r in dynamics_checks(h, rng))


def test_kms_identity(rng):
    rho = build_state(ising_amplitudes(1, 0, 0, 1, 0.7)).state.unit_trace_density()
    x, y = rng.normal(size=(2, 16, 16))
    r, cond = kms_identity(rho, x + x.T, y + y.T)
    assert r < 1e-9 and cond > 1
    r, _ = kms_identity(np.eye(4) / 4, np.eye(4), np.eye(4))
    assert r < 1e-15


def test_cocycle_and_control():
    st = build_state(ising_amplitudes(2, 1, 1, 2, 0.3, 5)).state
    recs = cocycle_locality(st, -3, -1)
    assert all(r.passed for r in recs)
    bad = {r.check: r for r in cocycle_locality(st, -3, -1, perturbation=0.5)}
    assert bad["cocycle:potential-difference"].residual > 1e-3


def test_terms_export(tmp_path):
    demo = two_block_state(4)
    terms = build_terms(demo.state, classify_state(demo))
    path = export_terms(terms, tmp_path)
    assert path.exists() and (tmp_path / "bond_-3.bin").exists()
