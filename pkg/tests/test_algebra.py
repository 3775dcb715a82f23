import numpy as np
import pytest

from carmarkov.algebra import (ChainOperator, ChainWindow, StateDensity, annihilator, car_checks, creator, embed,
                               from_local, load_operator, matrix_unit, occupation_projection, parity, reduced_density,
                               save_operator, tau, to_local)
from carmarkov.errors import WindowError


def test_car_relations_small_windows():
    for L in (1, 2, 3):
        recs = car_checks(ChainWindow(0, L))
        assert all(r.passed for r in recs)


def test_number_operators_are_matrix_units():
    w = ChainWindow(-2, 3)
    for s in w.sites:
        a, ad = annihilator(w, s).matrix, creator(w, s).matrix
        assert np.abs(ad @ a - occupation_projection(w, s, 2).matrix).max() < 1e-14
        assert np.abs(a @ ad - matrix_unit(w, s, 1, 1).matrix).max() < 1e-14


def test_window_errors():
    with pytest.raises(WindowError):
        ChainWindow(0, 9)
    with pytest.raises(WindowError):
        annihilator(ChainWindow(0, 2), 5)


def test_embed_matches_native_generators():
    small, big = ChainWindow(-1, 2), ChainWindow(-3, 4)
    for s in small.sites:
        img = embed(annihilator(small, s), big)
        assert np.abs(img.matrix - annihilator(big, s).matrix).max() < 1e-14
    x = annihilator(small, -1).matrix @ creator(small, 0).matrix
    y = annihilator(big, -1).matrix @ creator(big, 0).matrix
    assert np.abs(embed(ChainOperator(small, x), big).matrix - y).max() < 1e-14


def test_local_round_trip(rng):
    w = ChainWindow(-3, 4)
    region = w.region([-2, 0])
    m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    op = from_local(m, region)
    back, res = to_local(op, region)
    assert np.abs(back - m).max() < 1e-12
    assert res < 1e-12


def test_parity_flips_odd_elements():
    w = ChainWindow(0, 3)
    a = annihilator(w, 1)
    assert np.abs(parity(a).matrix + a.matrix).max() < 1e-14


def test_operator_files_round_trip(tmp_path, rng):
    w = ChainWindow(-1, 2)
    m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    op = ChainOperator(w, m, w.region([-1, 0]), "mixed")
    save_operator(tmp_path / "x", op, "unit_trace")
    back, norm = load_operator(tmp_path / "x")
    assert norm == "unit_trace"
    assert back.window == w and back.parity_tag == "mixed"
    assert np.array_equal(back.matrix, m)
    assert (tmp_path / "x.bin").stat().st_size == 16 * 16


def test_reduced_density_of_trace_state():
    w = ChainWindow(0, 3)
    st = StateDensity(w, np.eye(8), "unit_normalized_trace")
    assert np.abs(reduced_density(st, [0, 2]) - np.eye(4) / 4).max() < 1e-14
    assert abs(tau(st.tau_density()) - 1) < 1e-14
