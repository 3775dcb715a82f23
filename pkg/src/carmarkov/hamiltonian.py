"""Local potentials, the nearest-neighbour term table and its consequences.

For a region R the potential is h_R = -log rho_R with rho_R the unit-trace
density of the restriction of the state to R. For a Markov state the
potentials of intervals split into one-site terms H_j, H^_j and bond terms
H_{j,j+1} determined by the range classes of the two-step expectations.
"""
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .algebra import (ChainOperator, StateDensity, annihilator, commutator, creator, from_local,
                      occupation_projection, op_norm, parity_matrix, reduced_density, save_operator, to_local)
from .errors import InvariantError
from .linalg import condition_number, expm_hermitian, inv_positive, logm_positive
from .markov_state import monomial_basis
from .records import CheckRecord
from .structure import EVEN, FULL, SCALAR

EXP_TOL = 1e-10


def _embed(m, window, sites):
    return from_local(m, window.region(sites), "even").matrix


def local_potential(state, sites, local=False):
    """h = -log rho of the restriction to ``sites``; raises FaithfulnessError below the floor."""
    h = -logm_positive(reduced_density(state, sites))
    if local:
        return h
    return ChainOperator(state.window, _embed(h, state.window, sites), state.window.region(sites), "even")


def intervals(window):
    return [(k, l) for k in window.sites for l in window.sites if k <= l]


def potential_checks(state, tol=1e-9):
    """Normalization, exponential round trip and nested compatibility of interval potentials."""
    w = state.window
    pots = {kl: local_potential(state, range(kl[0], kl[1] + 1), local=True) for kl in intervals(w)}
    norm = expo = comp = init = 0.0
    for (k, l), h in pots.items():
        sites = tuple(range(k, l + 1))
        rho = reduced_density(state, sites)
        e = expm_hermitian(h, -1.0)
        norm = max(norm, abs(np.trace(e).real - 1))
        expo = max(expo, float(op_norm(e - rho)))
        big = StateDensity(w.region(sites).local_window(), e, "unit_trace")
        for k2, l2 in intervals(big.window):
            sub = tuple(range(k2, l2 + 1))
            comp = max(comp, float(op_norm(reduced_density(big, sub) - reduced_density(state, sub))))
            if k2 == k:
                # initial segments: the plain partial trace over trailing sites agrees
                d_keep = 2 ** len(sub)
                pt = np.trace(e.reshape(d_keep, -1, d_keep, e.shape[0] // d_keep), axis1=1, axis2=3)
                init = max(init, float(op_norm(pt - reduced_density(state, sub))))
    return pots, [
        CheckRecord("potential:normalization", "hamiltonian:potential", norm, tol),
        CheckRecord("potential:exponential-round-trip", "hamiltonian:potential", expo, EXP_TOL),
        CheckRecord("potential:compatibility", "hamiltonian:potential", comp, 1e-8),
        CheckRecord("potential:initial-partial-trace", "hamiltonian:potential", init, 1e-8),
    ]


def _functional_density(state, sites, m):
    """Unnormalized density on ``sites`` of x -> tau(m x) (m a window matrix)."""
    loc, _ = to_local(m, state.window.region(sites))
    return loc / 2 ** len(sites)


def l_density(state, j, omega):
    """Density on site j-1 of x -> phi(x P^j_omega); trace equals phi(P^j_omega)."""
    p = occupation_projection(state.window, j, omega).matrix
    return _functional_density(state, (j - 1,), p @ state.tau_density())


def r_density(state, j, omega):
    """Unit-trace density on site j+1 of y -> phi(P^j_omega y) / phi(P^j_omega)."""
    p = occupation_projection(state.window, j, omega).matrix
    d = _functional_density(state, (j + 1,), state.tau_density() @ p)
    return d / np.trace(d).real


def _site_log(state, j):
    return -logm_positive(reduced_density(state, (j,)))


def _pi(state, j, omega):
    return state.expect(occupation_projection(state.window, j, omega).matrix).real


def _P(state, j, omega):
    return occupation_projection(state.window, j, omega).matrix


@dataclass
class HamiltonianTerms:
    window: object
    classes: dict
    H: dict
    Hhat: dict
    bond: dict
    cases: dict
    records: list = field(default_factory=list)
    notes: list = field(default_factory=list)


def site_terms(state, j, cls):
    """(H_j, H^_j) as window matrices."""
    w = state.window
    zero = np.zeros((w.dim, w.dim), dtype=complex)
    if cls == SCALAR:
        return zero, _embed(_site_log(state, j), w, (j,))
    if cls == FULL:
        return _embed(_site_log(state, j), w, (j,)), zero
    if cls == EVEN:
        return -sum(np.log(_pi(state, j, o)) * _P(state, j, o) for o in (1, 2)), zero
    raise InvariantError(f"unknown range class {cls!r} at site {j}")


def bond_term(state, j, pair):
    """H_{j,j+1} for the class pair (class(j), class(j+1))."""
    w = state.window
    zero = np.zeros((w.dim, w.dim), dtype=complex)
    a, b = pair
    if pair == (SCALAR, SCALAR):
        return _embed(_site_log(state, j), w, (j,))
    if pair == (SCALAR, FULL):
        return _embed(-logm_positive(reduced_density(state, (j, j + 1))), w, (j, j + 1))
    if pair == (SCALAR, EVEN):
        return -sum(_embed(logm_positive(l_density(state, j + 1, o)), w, (j,)) @ _P(state, j + 1, o)
                    for o in (1, 2))
    if pair == (FULL, SCALAR):
        return zero
    if pair == (FULL, FULL):
        return _embed(_site_log(state, j + 1), w, (j + 1,))
    if pair == (FULL, EVEN):
        return -sum(np.log(_pi(state, j + 1, o)) * _P(state, j + 1, o) for o in (1, 2))
    if pair == (EVEN, SCALAR):
        return zero
    if pair == (EVEN, FULL):
        return -sum(_P(state, j, o) @ _embed(logm_positive(r_density(state, j, o)), w, (j + 1,))
                    for o in (1, 2))
    if pair == (EVEN, EVEN):
        out = zero.copy()
        for o1, o2 in itertools.product((1, 2), repeat=2):
            p1, p2 = _P(state, j, o1), _P(state, j + 1, o2)
            t = state.expect(p1 @ p2).real / _pi(state, j, o1)
            out -= np.log(t) * p1 @ p2
        return out
    raise InvariantError(f"no term for class pair {(a, b)} at bond {j}")


def build_terms(state, rc, tol=1e-9):
    """All H_j, H^_j and H_{j,j+1} for the classification ``rc``, with evenness and self-adjointness checks."""
    w = state.window
    classes = rc.classes
    H, Hhat, bond, cases = {}, {}, {}, {}
    for j in w.sites:
        H[j], Hhat[j] = site_terms(state, j, classes[j])
    for j in w.sites[:-1]:
        cases[j] = (classes[j], classes[j + 1])
        bond[j] = bond_term(state, j, cases[j])
    allt = list(H.values()) + list(Hhat.values()) + list(bond.values())
    even = max(float(op_norm(t - parity_matrix(t, w))) / 2 for t in allt)
    herm = max(float(op_norm(t - t.conj().T)) for t in allt)
    recs = [CheckRecord("terms:evenness", "hamiltonian:term-table", even, tol),
            CheckRecord("terms:self-adjointness", "hamiltonian:term-table", herm, tol)]
    notes = []
    if any(c == (EVEN, FULL) for c in cases.values()):
        notes.append("EvenPart/Full bond read as -sum_w P^j_w log rho_{r_w}")
    return HamiltonianTerms(w, dict(classes), H, Hhat, bond, cases, recs, notes)


def decomposition_sum(terms, k, l):
    out = terms.H[k] + terms.Hhat[l]
    for j in range(k, l):
        out = out + terms.bond[j]
    return out


def verify_decomposition(terms, state, k=None, l=None, tol=1e-8):
    """max norm of h_[k,l] - (H_k + sum H_{j,j+1} + H^_l); every interval when k, l are None."""
    pairs = intervals(state.window) if k is None else [(k, l)]
    worst, where = 0.0, None
    per = {}
    for a, b in pairs:
        h = local_potential(state, range(a, b + 1)).matrix
        r = float(op_norm(h - decomposition_sum(terms, a, b)))
        per[(a, b)] = r
        if r >= worst:
            worst, where = r, (a, b)
    return CheckRecord("hamiltonian:decomposition", "hamiltonian:decomposition", worst, tol,
                       detail=f"worst interval {where}"), per


def decomposition_obstruction(state):
    """max norm of h_[k,l] - h_[k,l-1] - h_[k+1,l] + h_[k+1,l-1] over intervals with l - k >= 2.

    Any nearest-neighbour split of the interval potentials makes this vanish,
    whatever the individual terms are.
    """
    w = state.window
    pot = {kl: local_potential(state, range(kl[0], kl[1] + 1)).matrix for kl in intervals(w)}
    worst = 0.0
    for k, l in pot:
        if l - k >= 2:
            d = pot[k, l] - pot[k, l - 1] - pot[k + 1, l] + pot[k + 1, l - 1]
            worst = max(worst, float(op_norm(d)))
    return worst


def verify_commutations(terms, tol=1e-9):
    w = terms.window
    sites = w.sites
    res = {"site-bond": 0.0, "bond-hat": 0.0, "site-hat": 0.0, "bond-bond": 0.0}
    for j in sites:
        res["site-hat"] = max(res["site-hat"], float(op_norm(commutator(terms.H[j], terms.Hhat[j]))))
    for j in sites[:-1]:
        res["site-bond"] = max(res["site-bond"], float(op_norm(commutator(terms.H[j], terms.bond[j]))))
        res["bond-hat"] = max(res["bond-hat"], float(op_norm(commutator(terms.bond[j], terms.Hhat[j + 1]))))
    for j in sites[:-2]:
        res["bond-bond"] = max(res["bond-bond"], float(op_norm(commutator(terms.bond[j], terms.bond[j + 1]))))
    return [CheckRecord(f"hamiltonian:commutation-{k}", "hamiltonian:commutation", v, tol) for k, v in res.items()]


def finite_dynamics(h, t, x):
    """sigma_t(x) = exp(-i t h) x exp(i t h)."""
    h = h.matrix if isinstance(h, ChainOperator) else np.asarray(h)
    u = expm_hermitian(h, -1j * t)
    return u @ np.asarray(x) @ u.conj().T


def dynamics_checks(h, rng, s=0.3, t=0.5, tol=EXP_TOL):
    h = h.matrix if isinstance(h, ChainOperator) else np.asarray(h)
    d = h.shape[0]
    x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    group = float(op_norm(finite_dynamics(h, s, finite_dynamics(h, t, x)) - finite_dynamics(h, s + t, x)))
    iso = abs(float(op_norm(finite_dynamics(h, t, x))) - float(op_norm(x))) / float(op_norm(x))
    zero = float(op_norm(finite_dynamics(h, 0.0, x) - x))
    g = expm_hermitian(h, -1.0)
    fixed = float(op_norm(finite_dynamics(h, t, g) - g))
    return [CheckRecord("dynamics:group-law", "hamiltonian:dynamics", group, tol),
            CheckRecord("dynamics:isometry", "hamiltonian:dynamics", iso, tol),
            CheckRecord("dynamics:identity-at-zero", "hamiltonian:dynamics", zero, tol),
            CheckRecord("dynamics:gibbs-fixed", "hamiltonian:dynamics", fixed, tol)]


def _interior_basis(w, lo, hi):
    return monomial_basis(w, range(lo, hi + 1))


def cocycle_locality(state, k, l, times=(0.3, 1.0), perturbation=0.0):
    """Interior commutation of h_[k-1,l+1] - h_[k,l] and of the cocycle u_t.

    ``perturbation`` adds s (a_k^+ a_{k+1} + a_{k+1}^+ a_k) to the larger
    potential (negative control for check (a)).
    """
    w = state.window
    if k - 1 not in w or l + 1 not in w or k + 1 > l - 1:
        raise InvariantError(f"window {w.sites} cannot hold [{k - 1},{l + 1}] with a nonempty interior")
    big = local_potential(state, range(k - 1, l + 2)).matrix
    small = local_potential(state, range(k, l + 1)).matrix
    if perturbation:
        hop = creator(w, k).matrix @ annihilator(w, k + 1).matrix
        big = big + perturbation * (hop + hop.conj().T)
    a = _interior_basis(w, k + 1, l - 1)
    diff = big - small
    ca = float(op_norm(diff @ a - a @ diff).max())
    cb = stab = 0.0
    for t in times:
        u = expm_hermitian(big, 1j * t) @ expm_hermitian(small, -1j * t)
        cb = max(cb, float(op_norm(u @ a - a @ u).max()))
        stab = max(stab, float(op_norm(finite_dynamics(small, t, a) - finite_dynamics(big, t, a)).max()))
    tag = "control" if perturbation else "check"
    return [CheckRecord("cocycle:potential-difference", "hamiltonian:cocycle", ca, 1e-8, kind=tag),
            CheckRecord("cocycle:unitary", "hamiltonian:cocycle", cb, 1e-7,
                        kind="info" if perturbation else "check"),
            CheckRecord("cocycle:window-stability", "hamiltonian:cocycle", stab, 1e-7,
                        kind="info" if perturbation else "check")]


def kms_identity(rho, x, y):
    """|Tr(rho x rho y rho^-1) - Tr(rho y x)| and the condition number of rho."""
    rho = np.asarray(rho)
    lhs = np.trace(rho @ x @ rho @ y @ inv_positive(rho))
    rhs = np.trace(rho @ y @ x)
    return float(abs(lhs - rhs)), condition_number(rho)


def kms_checks(state, rng, samples=4, tol=1e-7):
    rho = state.unit_trace_density()
    d = rho.shape[0]
    worst = 0.0
    for _ in range(samples):
        x, y = (rng.normal(size=(2, d, d)) + 1j * rng.normal(size=(2, d, d)))
        x, y = x + x.conj().T, y + y.conj().T
        r, cond = kms_identity(rho, x, y)
        worst = max(worst, r / max(1.0, float(op_norm(x) * op_norm(y))))
    unit, _ = kms_identity(rho, np.eye(d), np.eye(d))
    return [CheckRecord("kms:identity", "hamiltonian:kms", worst, tol, detail=f"condition number {cond:.3e}"),
            CheckRecord("kms:unit", "hamiltonian:kms", unit, tol)]


def export_terms(terms, directory):
    """Write each nonzero term as an operator file plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    w = terms.window
    entries = []
    for name, table in (("H", terms.H), ("Hhat", terms.Hhat), ("bond", terms.bond)):
        for j, m in sorted(table.items()):
            sites = (j, j + 1) if name == "bond" else (j,)
            fname = f"{name}_{j}"
            save_operator(d / fname, ChainOperator(w, m, w.region(sites), "even"))
            case = terms.cases[j] if name == "bond" else (terms.classes[j],)
            entries.append({"term": name, "site": j, "case": list(case), "file": fname})
    manifest = {"window_first": w.first_site, "window_length": w.length, "terms": entries, "notes": terms.notes}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d / "manifest.json"
