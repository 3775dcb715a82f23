import numpy as np
import pytest

from carmarkov.algebra import ChainWindow, annihilator, tau
from carmarkov.expectations import (choi_check, diagonal_lift_expectation, ergodic_average, expectation_checks,
                                    hs_conditional_expectation, parity_average, segment_basis, segment_expectation,
                                    structure_decompose, transpose_map)

W3 = ChainWindow(-2, 3)
KINDS = [("initial_up_to", -1), ("final_from", -1), ("single", 0), ("pair", -2), ("even_part_of", (-2, -1, 0)),
         ("diagonal_of", (-1,)), ("full_region", (-2, 0)), ("scalars", None), ("full", None)]


@pytest.mark.parametrize("kind,arg", KINDS)
def test_segment_expectations_are_conditional_expectations(kind, arg, rng):
    E = segment_expectation(W3, kind, arg)
    recs = expectation_checks(E, rng)
    assert all(r.passed for r in recs), [(r.check, r.residual) for r in recs if not r.passed]


def test_range_bases_are_algebras():
    for kind, arg in KINDS:
        v = segment_basis(W3, kind, arg).validate()
        assert max(v.values()) < 1e-12


def test_scalars_give_trace(rng):
    E = segment_expectation(W3, "scalars")
    x = rng.normal(size=(8, 8))
    assert np.abs(E(x) - tau(x) * np.eye(8)).max() < 1e-12


def test_transpose_is_not_completely_positive():
    c = choi_check(transpose_map(ChainWindow(0, 2)))
    assert not c["is_cp"]
    assert c["min_eigenvalue"] < -0.5


def test_diagonal_lift_cases(rng):
    w = ChainWindow(-2, 3)
    x = rng.normal(size=(8, 8))
    assert np.abs(diagonal_lift_expectation(w, ())(x) - x).max() < 1e-14
    full = diagonal_lift_expectation(w, w.sites)
    assert np.abs(full(annihilator(w, -1).matrix)).max() < 1e-14
    hs = hs_conditional_expectation(segment_basis(w, "diagonal_of", w.sites))
    assert np.abs(full(x) - hs(x)).max() < 1e-10


def test_structure_of_diagonal_expectation():
    w = ChainWindow(0, 1)
    E = hs_conditional_expectation(segment_basis(w, "diagonal_of", (0,)))
    dec = structure_decompose(E)
    assert len(dec["projections"]) == 2
    assert dec["factor_residual"] < 1e-9
    assert dec["reconstruction"] < 1e-9


def test_structure_of_identity_and_scalars():
    w = ChainWindow(0, 2)
    dec = structure_decompose(segment_expectation(w, "full"))
    assert len(dec["projections"]) == 1
    dec = structure_decompose(segment_expectation(w, "scalars"))
    assert len(dec["projections"]) == 1 and dec["reconstruction"] < 1e-9


def test_ergodic_average_of_expectation_is_itself(rng):
    w = ChainWindow(0, 2)
    E = segment_expectation(w, "single", 0)
    erg = ergodic_average(E, segment_basis(w, "full"))
    x = rng.normal(size=(4, 4))
    assert np.abs(erg(x) - E(x)).max() < 1e-12
    assert erg.fixed_dim == 4


def test_parity_average_fixed_points_are_even_part():
    w = ChainWindow(0, 1)
    erg = ergodic_average(parity_average(w), segment_basis(w, "full"))
    assert erg.fixed_dim == 2
    assert erg.cesaro_gap < 1e-8
