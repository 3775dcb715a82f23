import numpy as np
import pytest

from carmarkov.errors import ConstraintError
from carmarkov.markov_state import (build_state, closed_form_adjudication, corrupted_amplitudes, hopping_amplitudes,
                                   ising_admissible, ising_amplitudes, load_sequence, save_sequence,
                                   trivial_amplitudes, verify_amplitudes, verify_markov)


def _gating_ok(recs):
    return all(r.passed for r in recs if r.gating)


@pytest.mark.parametrize("seq", [trivial_amplitudes(4), ising_amplitudes(1, 0, 0, 1, 0.7),
                                 ising_amplitudes(2, 1, 1, 2, -0.3), hopping_amplitudes(0.7)],
                         ids=["trivial", "ising-a", "ising-b", "hopping"])
def test_families_are_markov(seq):
    assert _gating_ok(verify_amplitudes(seq))
    rep = build_state(seq)
    assert _gating_ok(rep.compatibility)
    assert _gating_ok(verify_markov(rep, choi=False))


def test_trivial_state_is_trace():
    rep = build_state(trivial_amplitudes(3))
    assert np.abs(rep.state.tau_density() - np.eye(8)).max() < 1e-14


def test_ising_constraint_is_enforced():
    with pytest.raises(ConstraintError):
        ising_amplitudes(1, 0, 2, 0, 0.5)
    assert ising_admissible(0.4, 0.4, 0.4, 0.4, 0.9)
    assert ising_admissible(1, 0, 0, 1, 0.5)
    assert not ising_admissible(1, 0, 0, 0.5, 0.5)


def test_hopping_closed_forms():
    adj = closed_form_adjudication(0.7)
    assert adj["hyperbolic_residual"] < 1e-12
    assert adj["trigonometric_residual"] > 1e-2
    assert abs(adj["normalizer_numeric"] - adj["normalizer_hyperbolic"]) < 1e-12
    assert adj["projection_residual"] < 1e-14


def test_corrupted_amplitude_breaks_two_step_form():
    rep = build_state(corrupted_amplitudes(ising_amplitudes(1, 0, 0, 1, 0.7)), strict=False)
    recs = {r.check: r for r in verify_markov(rep, choi=False)}
    assert recs["markov:two-step-preservation"].residual > 1e-3
    assert recs["markov:theta-commutation"].passed and recs["markov:evenness"].passed


def test_sequence_files_round_trip(tmp_path):
    seq = ising_amplitudes(2, 1, 1, 2, 0.3)
    save_sequence(seq, tmp_path)
    back = load_sequence(tmp_path)
    a, b = build_state(seq).state.rho, build_state(back).state.rho
    assert np.abs(a - b).max() == 0
    assert back.family == "ising" and back.params["h"] == 0.3
