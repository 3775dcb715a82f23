import numpy as np
import pytest

from carmarkov.errors import ClassificationError
from carmarkov.markov_state import build_state, hopping_amplitudes, ising_amplitudes
from carmarkov.structure import (EVEN, FULL, SCALAR, boundary_states, classify_state, correlation_decay,
                                 diagonal_lift_state, disintegrate_reconstruct, extract_classical_data,
                                 odd_annihilation_residual, markov_structure_checks, product_state, product_state_checks,
                                 theta_broken_expectation, trivial_state, two_block_state)


def _ok(recs):
    return all(r.passed for r in recs if r.gating)


@pytest.mark.parametrize("demo,pattern", [
    (trivial_state(4), (FULL,) * 4),
    (product_state([0.3, 0.6, 0.45, 0.7]), (FULL,) * 4),
    (product_state([0.3, 0.6, 0.45, 0.7], SCALAR), (SCALAR,) * 3 + (FULL,)),
    (two_block_state(4), (SCALAR, FULL, SCALAR, FULL)),
    (diagonal_lift_state([[0.9, 0.1], [0.2, 0.8]], 4), (EVEN,) * 3 + (FULL,)),
], ids=["trivial", "product-full", "product-scalar", "two-block", "diagonal-lift"])
def test_demo_classification_and_round_trip(demo, pattern):
    rc = classify_state(demo)
    assert rc.pattern == pattern
    assert _ok(rc.records)
    assert _ok(markov_structure_checks(demo.state, rc))
    recs, _ = disintegrate_reconstruct(demo.state, rc)
    assert _ok(recs), [(r.check, r.residual) for r in recs if not r.passed]


def test_ising_classifies_even_on_both_routes():
    rep = build_state(ising_amplitudes(1, 0, 0, 1, 0.7))
    for src in (rep, rep.state):
        rc = classify_state(src)
        assert rc.pattern == (EVEN, EVEN, EVEN, FULL)
        assert rc.expectations[-2].fixed_dim == 2


def test_hopping_state_is_refused_on_the_transition_route():
    with pytest.raises(ClassificationError):
        classify_state(build_state(hopping_amplitudes(0.7)))


def test_odd_annihilation_and_theta_broken_control():
    demo = trivial_state(3)
    rc = classify_state(demo)
    eps = rc.expectations[-2]
    assert odd_annihilation_residual(eps, -2) < 1e-12
    assert odd_annihilation_residual(theta_broken_expectation(eps, -2), -2) > 1e-3


def test_classical_data_of_trace_state():
    demo = diagonal_lift_state([[0.5, 0.5], [0.5, 0.5]], 3)
    rc = classify_state(demo)
    cd = extract_classical_data(demo.state, rc)
    for j in cd.gamma:
        assert np.abs(cd.distributions[j] - 0.5).max() < 1e-12
    for t in cd.transitions.values():
        assert np.abs(t - 0.5).max() < 1e-12
    assert _ok(cd.records)
    assert abs(sum(p for _, p in cd.measure()) - 1) < 1e-12


def test_single_site_gamma_measure_is_distribution():
    demo = diagonal_lift_state([[0.7, 0.3], [0.4, 0.6]], 2)
    rc = classify_state(demo)
    cd = extract_classical_data(demo.state, rc)
    j = cd.gamma[0]
    assert np.abs(np.array([p for _, p in cd.measure()]) - cd.distributions[j]).max() < 1e-12


def test_boundary_states_of_ising_are_even_and_sum_to_one():
    rep = build_state(ising_amplitudes(2, 1, 1, 2, 0.3))
    rc = classify_state(rep)
    cd = extract_classical_data(rep.state, rc)
    total = 0.0
    for om, mu in cd.measure():
        bps = boundary_states(rep.state, rc, om)
        assert [b.case for b in bps.blocks] == ["ii"]
        total += mu * np.trace(bps.tau_density()).real / rep.window.dim
    assert abs(total - 1) < 1e-12


def test_product_checks():
    demo = two_block_state(4)
    recs = {r.check: r for r in product_state_checks(demo.state, classify_state(demo), period=2)}
    assert recs["product:piece-factorization"].passed
    assert not recs["product:site-factorization"].passed
    demo = product_state([0.3] * 4)
    recs = {r.check: r for r in product_state_checks(demo.state, classify_state(demo), period=1)}
    assert all(r.passed for r in recs.values())


def test_correlation_examples():
    res = correlation_decay([[0.5, 0.5], [0.5, 0.5]], length=5)
    assert np.abs(res["correlations"]).max() < 1e-14 and res["lambda2"] == 0
    res = correlation_decay([[0.9, 0.1], [0.1, 0.9]], length=6)
    assert np.abs(np.asarray(res["ratios"]) - 0.8).max() < 1e-8
    a = np.array([[0, 1], [0, 0]])
    res = correlation_decay([[0.9, 0.1], [0.1, 0.9]], x=a, y=a.T, length=4)
    assert np.abs(res["correlations"]).max() < 1e-14
    with pytest.raises(ValueError):
        correlation_decay([[0, 1], [1, 0]])
