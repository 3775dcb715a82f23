"""Two-step expectations, range classification, disintegration and mixing.

A state on a window is given by its density (``StateDensity``) or by a
constructed ``MarkovStateRep``. For every interior site n the two-step
expectation eps_n acts on the pair algebra of {n, n+1}; its range is
scalars, the even part of site n, or the full algebra of site n. The last
site of the window has no right neighbour and is treated as Full.
"""
import itertools
from dataclasses import dataclass, field

import numpy as np

from . import basis
from .algebra import (ChainOperator, ChainWindow, StateDensity, annihilator, creator, from_local,
                      occupation_projection, op_norm, parity_matrix, tau, to_local)
from .errors import ClassificationError, FaithfulnessError, InvariantError, WindowError
from .expectations import (CondExpMap, diagonal_lift_expectation, ergodic_average, expectation_checks,
                           membership_residual, segment_basis, state_preserving_expectation)
from .markov_state import MarkovStateRep, monomial_basis, monomial_parities, quasi_conditional_expectation
from .records import CheckRecord

SCALAR, EVEN, FULL = "Scalar", "EvenPart", "Full"
CANDIDATES = (FULL, EVEN, SCALAR)
TOL = 1e-9


def _state_of(source):
    if isinstance(source, MarkovStateRep):
        return source.state
    if isinstance(source, DemoState):
        return source.state
    return source


def candidate_basis(window, n, cls):
    if cls == FULL:
        return segment_basis(window, "single", n)
    if cls == EVEN:
        return segment_basis(window, "even_part_of", (n,))
    if cls == SCALAR:
        return segment_basis(window, "scalars")
    raise ValueError(f"unknown class {cls!r}")


def _bimodule_residual(E, domain):
    b = E.range.matrices
    x = domain.matrices
    ex = E(x)
    res = 0.0
    for b1 in b:
        for b2 in b:
            res = max(res, float(op_norm(E(b1 @ x @ b2) - b1 @ ex @ b2).max()))
    return res


def derive_two_step(source, n, candidates=CANDIDATES, tol=TOL):
    """The two-step expectation eps_n on the pair algebra of {n, n+1}.

    For a constructed Markov state the transition map is E_{n]} restricted
    to the pair algebra and eps_n is its ergodic limit. For a bare density
    the phi-orthogonal projections onto the candidate ranges are tried from
    the largest down and the first bimodule one is kept; scalars always
    qualify.
    """
    state = _state_of(source)
    w = state.window
    if n not in w or n == w.last_site:
        raise WindowError(f"site {n} has no right neighbour in the window")
    dom = segment_basis(w, "pair", n)
    rep = source.rep if isinstance(source, DemoState) else source
    if isinstance(rep, MarkovStateRep):
        e = quasi_conditional_expectation(rep, n)
        mons = monomial_basis(w, range(w.first_site, n + 2))
        leak = float(np.abs(state.expect(e(mons)) - state.expect(mons)).max())
        if leak > tol:
            raise ClassificationError(
                f"transition map at site {n} does not preserve the state on the initial segment "
                f"(residual {leak:.2e}); not a Markov state")
        eps = ergodic_average(e, dom, state=state, label=f"eps_{n}")
        eps.method = "transition"
        eps.candidate_residuals = {}
        return eps
    tried = {}
    for cls in candidates:
        cand = state_preserving_expectation(state, candidate_basis(w, n, cls))
        tried[cls] = _bimodule_residual(cand, dom)
        if tried[cls] < tol:
            break
    else:
        raise ClassificationError(f"no phi-preserving expectation at site {n}: residuals {tried}")
    eps = ergodic_average(cand, dom, state=state, label=f"eps_{n}")
    eps.method = "projection"
    eps.candidate_residuals = tried
    return eps


def _single_monomials(w, s):
    return np.array([occupation_projection(w, s, 1).matrix, occupation_projection(w, s, 2).matrix,
                     annihilator(w, s).matrix, creator(w, s).matrix])


def odd_annihilation_residual(eps, n):
    """Largest norm of eps_n on the odd elements a, a^+ of site n+1."""
    w = eps.window
    odd = np.array([annihilator(w, n + 1).matrix, creator(w, n + 1).matrix])
    return float(op_norm(eps(odd)).max())


def theta_broken_expectation(eps, n, strength=0.1):
    """eps_n plus a term sending a_{n+1} to a multiple of I (negative control)."""
    w = eps.window
    ad = creator(w, n + 1).matrix
    eye = np.eye(w.dim)

    def apply(m):
        c = 2 * np.einsum("ij,...ji->...", ad, m) / w.dim
        return eps._apply(m) + strength * c[..., None, None] * eye

    bad = CondExpMap(w, eps.range, apply, "custom", state=eps.state, domain=eps.domain,
                     label=f"theta-broken-eps_{n}")
    bad.fixed_dim = eps.fixed_dim
    return bad


def classify_range(eps, n, state, tol=TOL):
    """Class of the range of eps_n, with check records for the matching form."""
    w = state.window
    phi = state.expect
    dim = eps.fixed_dim
    rng = eps.range
    pair = monomial_basis(w, (n, n + 1))
    recs = []
    theta = max(float(membership_residual(parity_matrix(b, w), rng)) for b in rng.matrices)
    recs.append(CheckRecord(f"structure:range-theta-invariance[{n}]", "structure:range-class", theta, 1e-8))
    recs.append(CheckRecord(f"structure:range-algebra[{n}]", "expectations:ergodic-limit", eps.algebra_residual, 1e-8))
    pres = float(np.abs(phi(eps(pair)) - phi(pair)).max())
    recs.append(CheckRecord(f"structure:two-step-preservation[{n}]", "structure:two-step", pres, tol))
    recs.append(CheckRecord(f"structure:cesaro[{n}]", "expectations:ergodic-limit", eps.cesaro_gap, 1e-8))
    eye = np.eye(w.dim)
    if dim == 1:
        cls = SCALAR
        form = float(op_norm(eps(pair) - phi(pair)[:, None, None] * eye).max())
    elif dim == 2:
        even = segment_basis(w, "even_part_of", (n,))
        projs = [occupation_projection(w, n, i).matrix for i in (1, 2)]
        match = max([float(membership_residual(b, even)) for b in rng.matrices]
                    + [float(membership_residual(p, rng)) for p in projs])
        if match > 1e-8:
            raise ClassificationError(f"two-dimensional range at site {n} is not the even part (residual {match:.2e})")
        cls = EVEN
        pp = [phi(p).real for p in projs]
        if min(pp) <= 0:
            raise FaithfulnessError(f"occupation projection at site {n} has zero weight")
        pred = sum(phi(p @ pair)[:, None, None] / q * p for p, q in zip(projs, pp))
        form = float(op_norm(eps(pair) - pred).max())
    elif dim == 4:
        single = segment_basis(w, "single", n)
        match = max(float(membership_residual(b, single)) for b in rng.matrices)
        if match > 1e-8:
            raise ClassificationError(f"four-dimensional range at site {n} is not the site algebra")
        cls = FULL
        xs = _single_monomials(w, n)
        ys = _single_monomials(w, n + 1)
        form = 0.0
        for x in xs:
            form = max(form, float(op_norm(eps(x @ ys) - x[None] * phi(ys)[:, None, None]).max()))
        recs.append(CheckRecord(f"structure:odd-annihilation[{n}]", "structure:odd-annihilation",
                                odd_annihilation_residual(eps, n), tol))
    else:
        raise ClassificationError(f"fixed-point algebra at site {n} has dimension {dim}")
    recs.append(CheckRecord(f"structure:two-step-form[{n}]", "structure:range-class", form, tol,
                            detail=f"class {cls}"))
    return cls, recs


@dataclass
class RangeClass:
    window: ChainWindow
    classes: dict
    expectations: dict = field(default_factory=dict)
    records: list = field(default_factory=list)

    @property
    def gamma(self):
        return tuple(s for s in self.window.sites[:-1] if self.classes[s] == EVEN)

    @property
    def pattern(self):
        return tuple(self.classes[s] for s in self.window.sites)


def classify_state(source, candidates=None, tol=TOL):
    """Classify every site of the window (the last site is Full by convention)."""
    state = _state_of(source)
    if candidates is None and isinstance(source, DemoState):
        candidates = source.candidates
    w = state.window
    classes, eps_map, recs = {}, {}, []
    for n in w.sites[:-1]:
        if candidates is None:
            cands = CANDIDATES
        elif isinstance(candidates, dict):
            cands = candidates.get(n, CANDIDATES)
        else:
            cands = tuple(candidates)
        eps = derive_two_step(source, n, cands, tol)
        cls, r = classify_range(eps, n, state, tol)
        classes[n] = cls
        eps_map[n] = eps
        recs.extend(r)
    classes[w.last_site] = FULL
    return RangeClass(w, classes, eps_map, recs)


def chain_evaluation_residual(state, eps_map, tol=TOL):
    """max |phi(x_k...x_l) - phi(eps_k(x_k eps_{k+1}(... eps_{l-1}(x_{l-1} x_l))))| over all monomials."""
    w = state.window
    sites = w.sites
    y = _single_monomials(w, sites[-1])
    for s in reversed(sites[:-1]):
        g = _single_monomials(w, s)
        prod = np.einsum("aij,bjk->abik", g, y).reshape(-1, w.dim, w.dim)
        y = eps_map[s](prod)
    direct = monomial_basis(w, sites)
    return float(np.abs(state.expect(y) - state.expect(direct)).max())


def lift_two_step(eps, n):
    """Extend eps_n to the whole window as id (x) eps_n (x) id on tensor matrix units."""
    w = eps.window
    i = w.index(n)
    pair_window = ChainWindow(0, 2)
    region = w.region([n, n + 1])
    units = np.eye(16, dtype=complex).reshape(16, 4, 4)
    img = eps(from_local(units, region))
    loc, _ = to_local(img, region)
    sup = loc.reshape(16, 16).T  # vec(out) = sup @ vec(in), row-major
    left, right = 2 ** i, 2 ** (w.length - i - 2)
    s4 = sup.reshape(4, 4, 4, 4)

    def apply(m):
        m = np.asarray(m)
        lead = m.shape[:-2]
        t = m.reshape(lead + (left, 4, right, left, 4, right))
        out = np.einsum("pqrs,...arbcsd->...apbcqd", s4, t)
        return out.reshape(lead + (w.dim, w.dim))

    del pair_window
    return CondExpMap(w, eps.range, apply, "custom", state=eps.state, label=f"lift_eps_{n}")


def markov_structure_checks(state, rc, tol=TOL, rng=None):
    """Chain evaluation, lifted preservation, stabilization and evenness."""
    rng = np.random.default_rng(0) if rng is None else rng
    w = state.window
    recs = [CheckRecord("structure:chain-evaluation", "structure:chain-evaluation",
                        chain_evaluation_residual(state, rc.expectations), tol)]
    lifts = {n: lift_two_step(eps, n) for n, eps in rc.expectations.items()}
    pres, theta = 0.0, 0.0
    for n, lf in lifts.items():
        mons = monomial_basis(w, range(w.first_site, n + 2))
        pres = max(pres, float(np.abs(state.expect(lf(mons)) - state.expect(mons)).max()))
        x = mons[rng.choice(len(mons), size=min(16, len(mons)), replace=False)]
        theta = max(theta, float(op_norm(parity_matrix(lf(x), w) - lf(parity_matrix(x, w))).max()))
    recs.append(CheckRecord("structure:lifted-preservation", "structure:markov-extension", pres, tol))
    recs.append(CheckRecord("structure:lifted-theta", "structure:markov-extension", theta, tol))
    stab = 0.0
    sites = list(lifts)
    for a, n in enumerate(sites):
        for b in range(a + 1, len(sites)):
            m = sites[b]
            if m - 1 < w.first_site:
                continue
            x = monomial_basis(w, range(w.first_site, m))
            x = x[rng.choice(len(x), size=min(16, len(x)), replace=False)]
            shorter = x
            for j in range(m, n - 1, -1):
                shorter = lifts[j](shorter) if j in lifts else shorter
            longer = x
            top = sites[-1]
            for j in range(top, n - 1, -1):
                longer = lifts[j](longer)
            stab = max(stab, float(op_norm(longer - shorter).max()))
    recs.append(CheckRecord("structure:stabilization", "structure:markov-extension", stab, tol))
    par = monomial_parities(w.length)
    odd = monomial_basis(w, w.sites)[par == 1]
    recs.append(CheckRecord("structure:evenness", "structure:even-state", float(np.abs(state.expect(odd)).max()), 1e-10))
    return recs


@dataclass
class ClassicalChainData:
    gamma: tuple
    blocks: list
    distributions: dict
    transitions: dict
    records: list = field(default_factory=list)

    def block_weights(self, block):
        """Path weights pi_{w_first} prod pi_{w_j w_{j+1}} over a Gamma block; keys are tuples in {1, 2}."""
        out = {}
        for om in itertools.product((1, 2), repeat=len(block)):
            p = self.distributions[block[0]][om[0] - 1]
            for k in range(len(block) - 1):
                p *= self.transitions[block[k]][om[k] - 1, om[k + 1] - 1]
            out[om] = p
        return out

    def measure(self):
        """List of (omega dict site -> value, weight) over Omega = prod of Gamma blocks."""
        per_block = [self.block_weights(b) for b in self.blocks]
        out = []
        for combo in itertools.product(*[list(pb.items()) for pb in per_block]):
            om, wgt = {}, 1.0
            for blk, (vals, p) in zip(self.blocks, combo):
                om.update(dict(zip(blk, vals)))
                wgt *= p
            out.append((om, wgt))
        return out

    def csv_rows(self):
        rows = []
        for j in self.gamma:
            for a in (1, 2):
                rows.append((j, a, "", float(self.distributions[j][a - 1]), "distribution"))
        for j, t in sorted(self.transitions.items()):
            for a in (1, 2):
                for b in (1, 2):
                    rows.append((j, a, b, float(t[a - 1, b - 1]), "transition"))
        return rows


def _runs(sites):
    runs = []
    for s in sites:
        if runs and runs[-1][-1] == s - 1:
            runs[-1].append(s)
        else:
            runs.append([s])
    return [tuple(r) for r in runs]


def extract_classical_data(state, rc, tol=1e-10):
    """Distributions and transition coefficients over the Gamma sites."""
    w = state.window
    gamma = rc.gamma
    blocks = _runs(gamma)
    P = {(j, i): occupation_projection(w, j, i).matrix for j in gamma for i in (1, 2)}
    dist, trans = {}, {}
    for j in gamma:
        dist[j] = np.array([state.expect(P[j, 1]).real, state.expect(P[j, 2]).real])
        if dist[j].min() <= 0:
            raise FaithfulnessError(f"zero-probability occupation projection at site {j}")
    for blk in blocks:
        for j in blk[:-1]:
            t = np.array([[state.expect(P[j, a] @ P[j + 1, b]).real for b in (1, 2)] for a in (1, 2)])
            trans[j] = t / dist[j][:, None]
    rows = max([abs(t.sum(1) - 1).max() for t in trans.values()], default=0.0)
    neg = max([max(-t.min(), 0.0) for t in trans.values()], default=0.0)
    cons = max([abs(dist[j] @ trans[j] - dist[j + 1]).max() for j in trans], default=0.0)
    recs = [CheckRecord("classical:row-sums", "structure:transition-coefficients", rows, tol),
            CheckRecord("classical:nonnegativity", "structure:transition-coefficients", neg, tol),
            CheckRecord("classical:consistency", "structure:transition-coefficients", cons, tol)]
    return ClassicalChainData(gamma, blocks, dist, trans, recs)


@dataclass
class BlockState:
    sites: tuple
    case: str
    left: int
    right: int
    density: np.ndarray


@dataclass
class BoundaryProductState:
    """The block states for one omega; densities are tau-densities on the full window."""
    window: ChainWindow
    omega: dict
    blocks: list

    def tau_density(self):
        out = np.eye(self.window.dim, dtype=complex)
        for b in self.blocks:
            out = out @ b.density
        return out

    def expect(self, y):
        return tau(self.tau_density() @ np.asarray(y))


def _complement_blocks(rc):
    w = rc.window
    gamma = set(rc.gamma)
    out = []
    for blk in _runs([s for s in w.sites if s not in gamma]):
        left = blk[0] - 1 if blk[0] - 1 in gamma else None
        right = blk[-1] + 1 if blk[-1] + 1 in gamma else None
        dep_left = left is not None and rc.classes[blk[0]] != SCALAR
        dep_right = right is not None and rc.classes[blk[-1]] != FULL
        case = {(True, True): "iii", (True, False): "ii", (False, True): "i", (False, False): "none"}[(dep_left, dep_right)]
        out.append((blk, case, left if dep_left else None, right if dep_right else None))
    return out


def block_pieces(rc, blk):
    """Split a block where the two-step chain decouples: after a Full site or before a Scalar one."""
    pieces = [[blk[0]]]
    for j in blk[1:]:
        if rc.classes[j - 1] == FULL or rc.classes[j] == SCALAR:
            pieces.append([j])
        else:
            pieces[-1].append(j)
    return [tuple(p) for p in pieces]


def boundary_states(state, rc, omega, _cache=None):
    """Block functionals for the boundary values ``omega`` (site -> 1 or 2)."""
    w = state.window
    W = state.tau_density()
    blocks = []
    for blk, case, left, right in _complement_blocks(rc):
        key = (blk, omega.get(left), omega.get(right))
        if _cache is not None and key in _cache:
            blocks.append(_cache[key])
            continue
        q = np.eye(w.dim)
        norm = 1.0
        for s in (left, right):
            if s is not None:
                p = occupation_projection(w, s, omega[s]).matrix
                ps = state.expect(p).real
                if ps <= 0:
                    raise FaithfulnessError(f"zero-probability boundary projection at site {s}")
                q = q @ p
                norm *= ps
        mask = basis.region_mask(w.length, w.region(blk).indices, "full")
        dens = basis.project(q @ W @ q, w.length, mask) / norm
        bs = BlockState(blk, case, left, right, dens)
        if _cache is not None:
            _cache[key] = bs
        blocks.append(bs)
    return BoundaryProductState(w, dict(omega), blocks)


def _omega_projection(w, omega):
    p = np.eye(w.dim)
    for j, v in omega.items():
        p = p @ occupation_projection(w, j, v).matrix
    return p


def compress(y, window, gamma, omega):
    """The omega component 2^|Gamma| E_{complement}(P_omega y) of a lifted element."""
    comp = tuple(window.index(s) for s in window.sites if s not in gamma)
    mask = basis.region_mask(window.length, comp, "full")
    return 2 ** len(gamma) * basis.project(_omega_projection(window, omega) @ y, window.length, mask)


def _pair_map(window, n, fn):
    """Linear map on the pair algebra given on monomials g_a(n) g_b(n+1) by fn(x_n, x_{n+1})."""
    gn, gm = _single_monomials(window, n), _single_monomials(window, n + 1)
    mons = np.einsum("aij,bjk->abik", gn, gm).reshape(16, window.dim, window.dim)
    imgs = np.array([fn(gn[a], gm[b]) for a in range(4) for b in range(4)])
    gram = np.einsum("aij,bij->ab", mons.conj(), mons)
    ginv = np.linalg.inv(gram)

    def apply(m):
        c = np.einsum("aij,...ij->...a", mons.conj(), m)
        return np.einsum("...a,ba,bij->...ij", c, ginv, imgs)

    return apply


def reconstruct_expectations(state, rc):
    """Rebuild eps_n from a state and the classification types."""
    w = state.window
    psi = state.expect
    W = state.tau_density()
    eye = np.eye(w.dim)
    out = {}
    for n in w.sites[:-1]:
        cls = rc.classes[n]
        dom = segment_basis(w, "pair", n)
        if cls == SCALAR:
            fn = lambda x, y: psi(x @ y) * eye
        elif cls == FULL:
            fn = lambda x, y: x * psi(y)
        else:
            projs = [occupation_projection(w, n, i).matrix for i in (1, 2)]
            weights = [psi(p).real for p in projs]

            def fn(x, y, projs=projs, weights=weights):
                # Tr over site n of x P_i equals the diagonal entry of the single-site factor
                return sum(2 * tau(x @ p) * psi(p @ y) / q * p for p, q in zip(projs, weights))
        rng = candidate_basis(w, n, cls)
        E = CondExpMap(w, rng, _pair_map(w, n, fn), "state_preserving", state=state, domain=dom,
                       label=f"rebuilt_eps_{n}")
        out[n] = E
    del W
    return out


def disintegrate_reconstruct(state, rc, tol=TOL, rng=None):
    """Disintegrate over the classical chain on Gamma, rebuild, and compare.

    Returns ``(records, details)``; details hold the rebuilt density, the
    measure and the boundary states.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    w = state.window
    W = state.tau_density()
    gamma = rc.gamma
    recs = []
    lift = diagonal_lift_expectation(w, gamma)
    mons = monomial_basis(w, w.sites)
    inv = float(np.abs(state.expect(lift(mons)) - state.expect(mons)).max())
    recs.append(CheckRecord("structure:lift-invariance", "structure:lift-invariance", inv, 1e-10))
    if gamma:
        classical = extract_classical_data(state, rc)
        recs.extend(classical.records)
        measure = classical.measure()
    else:
        classical, measure = None, [({}, 1.0)]
    cache = {}
    states = []
    w_prime = np.zeros((w.dim, w.dim), dtype=complex)
    for om, mu in measure:
        bps = boundary_states(state, rc, om, cache)
        states.append((om, mu, bps))
        w_prime += mu * 2 ** len(gamma) * bps.tau_density() @ _omega_projection(w, om)
    dis = float(np.abs(tau(w_prime @ mons) - tau(W @ mons)).max())
    recs.append(CheckRecord("structure:disintegration", "structure:disintegration", dis, tol))
    xs = np.concatenate([mons[rng.choice(len(mons), size=min(8, len(mons)), replace=False)],
                         rng.normal(size=(2, w.dim, w.dim)) + 1j * rng.normal(size=(2, w.dim, w.dim))])
    direct = 0.0
    for x in xs:
        ex = lift(x)
        val = sum(mu * bps.expect(compress(ex, w, gamma, om)) for om, mu, bps in states)
        direct = max(direct, abs(val - state.expect(x)))
    recs.append(CheckRecord("structure:disintegration-direct", "structure:disintegration", direct, tol))
    odd = max(float(op_norm((b.density - parity_matrix(b.density, w)) / 2)) for _, _, bps in states for b in bps.blocks)
    recs.append(CheckRecord("structure:boundary-evenness", "structure:boundary-states", odd, 1e-10))
    pos = max(max(-np.linalg.eigvalsh((b.density + b.density.conj().T) / 2)[0], 0.0)
              for _, _, bps in states for b in bps.blocks)
    recs.append(CheckRecord("structure:boundary-positivity", "structure:boundary-states", pos, tol))
    total = abs(sum(mu * tau(bps.tau_density()) for _, mu, bps in states) - 1)
    recs.append(CheckRecord("structure:boundary-normalization", "structure:boundary-states", total, tol))
    fac = 0.0
    for _, _, bps in states:
        for b in bps.blocks:
            pieces = block_pieces(rc, b.sites)
            z = tau(b.density).real
            prod = z * np.eye(w.dim, dtype=complex)
            for pc in pieces:
                mask = basis.region_mask(w.length, w.region(pc).indices, "full")
                prod = prod @ (basis.project(b.density, w.length, mask) / z)
            fac = max(fac, float(op_norm(prod - b.density)))
    recs.append(CheckRecord("structure:block-factorization", "structure:boundary-states", fac, tol))
    psi = StateDensity(w, w_prime, "unit_normalized_trace")
    rebuilt = reconstruct_expectations(psi, rc)
    pres = 0.0
    agree = 0.0
    cexp = []
    for n, E in rebuilt.items():
        pair = monomial_basis(w, (n, n + 1))
        pres = max(pres, float(np.abs(psi.expect(E(pair)) - psi.expect(pair)).max()))
        if n in rc.expectations:
            agree = max(agree, float(op_norm(E(pair) - rc.expectations[n](pair)).max()))
        cexp.extend(expectation_checks(E, rng, samples=3, tol=tol, anchor="structure:reconstruction",
                                       choi=False, domain=E.domain))
    recs.append(CheckRecord("structure:reconstruction-preservation", "structure:reconstruction", pres, tol))
    recs.append(CheckRecord("structure:reconstruction-chain", "structure:reconstruction",
                            chain_evaluation_residual(psi, rebuilt), tol))
    recs.append(CheckRecord("structure:reconstruction-agreement", "structure:reconstruction", agree, tol))
    recs.append(CheckRecord("structure:reconstruction-expectations", "structure:reconstruction",
                            max(r.residual for r in cexp), tol))
    details = {"density": w_prime, "measure": measure, "boundary_states": states, "classical": classical,
               "rebuilt": rebuilt}
    return recs, details


def product_state_checks(state, rc, period=None, tol=TOL):
    """Factorization over the decoupled pieces, over single sites, and translation invariance.

    ``period`` (1 or 2) compares restrictions of consecutive cells for the
    translation criterion; None skips it.
    """
    w = state.window
    if rc.gamma:
        raise ClassificationError("product-state checks need an empty Gamma")
    pieces = block_pieces(rc, w.sites)
    W = state.tau_density()

    def factor_residual(parts):
        prod = np.eye(w.dim, dtype=complex)
        for pc in parts:
            mask = basis.region_mask(w.length, w.region(pc).indices, "full")
            prod = prod @ basis.project(W, w.length, mask)
        mons = monomial_basis(w, w.sites)
        return float(np.abs(tau(prod @ mons) - tau(W @ mons)).max())

    recs = [CheckRecord("product:piece-factorization", "structure:product-state", factor_residual(pieces), tol,
                        detail=f"pieces {pieces}")]
    single = factor_residual([(s,) for s in w.sites])
    kind = "check" if all(len(p) == 1 for p in pieces) else "info"
    recs.append(CheckRecord("product:site-factorization", "structure:product-state", single, tol, kind=kind))
    if period:
        from .algebra import reduced_density
        cells = [tuple(w.sites[i:i + period]) for i in range(0, w.length - period + 1, period)]
        cells = [c for c in cells if len(c) == period]
        tr = max([float(op_norm(reduced_density(state, a) - reduced_density(state, b)))
                  for a, b in zip(cells, cells[1:])], default=0.0)
        recs.append(CheckRecord("product:translation-invariance", "structure:translation-invariance", tr, tol,
                                kind="info"))
    return recs


@dataclass
class DemoState:
    family: str
    state: StateDensity
    expected: tuple = None
    candidates: object = None
    params: dict = field(default_factory=dict)
    rep: object = None


def _occ_density(p):
    return np.diag([1 - p, p]).astype(complex)


def trivial_state(length):
    w = ChainWindow(-(length - 1), length)
    return DemoState("trivial", StateDensity(w, np.eye(w.dim), "unit_normalized_trace"),
                     (FULL,) * length, None, {})


def product_state(occupations, pattern=FULL, first_site=None):
    """One-site product of diagonal densities diag(1-p, p); ``pattern`` selects Full or Scalar ranges."""
    occ = [float(p) for p in occupations]
    L = len(occ)
    w = ChainWindow(-(L - 1) if first_site is None else first_site, L)
    rho = np.ones((1, 1), dtype=complex)
    for p in occ:
        if not 0 < p < 1:
            raise ValueError("occupations must lie strictly between 0 and 1")
        rho = np.kron(rho, _occ_density(p))
    if pattern not in (FULL, SCALAR):
        raise ValueError("product pattern must be Full or Scalar")
    expected = (pattern,) * (L - 1) + (FULL,)
    return DemoState("product", StateDensity(w, rho, "unit_trace"), expected, (pattern,),
                     {"occupations": occ, "pattern": pattern})


def default_pair_densities():
    a = np.array([[0.1, 0, 0, 0], [0, 0.35, 0.2, 0], [0, 0.2, 0.3, 0], [0, 0, 0, 0.25]], dtype=complex)
    b = np.array([[0.3, 0, 0, 0], [0, 0.15, -0.1j, 0], [0, 0.1j, 0.25, 0], [0, 0, 0, 0.3]], dtype=complex)
    return [a, b]


def two_block_state(length, pair_densities=None, tail_occupation=0.4):
    """Product over consecutive site pairs; an odd last site gets diag(1-p, p)."""
    pairs = default_pair_densities() if pair_densities is None else [np.asarray(p, complex) for p in pair_densities]
    w = ChainWindow(-(length - 1), length)
    par = np.diag([1.0, -1.0, -1.0, 1.0])
    for p in pairs:
        if np.abs(p - par @ p @ par).max() > 1e-12 or np.abs(p - p.conj().T).max() > 1e-12:
            raise ValueError("pair densities must be even and Hermitian")
    rho = np.ones((1, 1), dtype=complex)
    k = 0
    expected = []
    while len(expected) + 2 <= length:
        rho = np.kron(rho, pairs[k % len(pairs)])
        expected += [SCALAR, FULL]
        k += 1
    if len(expected) < length:
        rho = np.kron(rho, _occ_density(tail_occupation))
        expected.append(FULL)
    return DemoState("two_block", StateDensity(w, rho, "unit_trace"), tuple(expected), None,
                     {"pairs": k})


def stationary_distribution(pi):
    vals, vecs = np.linalg.eig(np.asarray(pi, float).T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1))])
    return v / v.sum()


def is_primitive(pi):
    """Wielandt bound: a nonnegative n x n matrix is primitive iff its ((n-1)^2 + 1)-th power is positive."""
    pi = np.asarray(pi, float)
    n = len(pi)
    return bool((np.linalg.matrix_power(pi, (n - 1) ** 2 + 1) > 0).all())


def diagonal_lift_state(pi, length, initial=None):
    """Diagonal lifting of the classical chain with transition matrix ``pi``."""
    pi = np.asarray(pi, float)
    if np.abs(pi.sum(1) - 1).max() > 1e-12 or pi.min() < 0:
        raise ValueError("transition matrix must be row stochastic")
    p0 = stationary_distribution(pi) if initial is None else np.asarray(initial, float)
    w = ChainWindow(-(length - 1), length)
    bits = (np.arange(w.dim)[:, None] >> (length - 1 - np.arange(length))[None, :]) & 1
    mu = p0[bits[:, 0]]
    for k in range(length - 1):
        mu = mu * pi[bits[:, k], bits[:, k + 1]]
    return DemoState("diagonal_lift", StateDensity(w, np.diag(mu).astype(complex), "unit_trace"),
                     (EVEN,) * (length - 1) + (FULL,), None, {"pi": pi.tolist(), "initial": p0.tolist()})


def _classical_correlation(pi, p0, f, g, r):
    pr = np.linalg.matrix_power(pi, r)
    joint = (p0 * f) @ pr @ g
    return joint - (p0 @ f) * ((p0 @ pr) @ g)


def correlation_decay(pi, x=None, y=None, distances=None, length=7, tol=1e-10):
    """Connected correlations c(r) = phi(x alpha^r(y)) - phi(x) phi(alpha^r(y)) for a diagonal lift.

    ``x`` and ``y`` are 2x2 single-site matrices (default V). Returns a dict
    with quantum and classical correlations, successive ratios, the fitted
    decay rate, lambda_2, the bound constant and check records.
    """
    pi = np.asarray(pi, float)
    if not is_primitive(pi):
        raise ValueError("transition matrix is not primitive; no decay fit")
    V = np.diag([1.0, -1.0])
    x = V if x is None else np.asarray(x, complex)
    y = V if y is None else np.asarray(y, complex)
    demo = diagonal_lift_state(pi, length)
    st = demo.state
    w = st.window
    p0 = np.asarray(demo.params["initial"])
    distances = list(range(1, length)) if distances is None else list(distances)
    X = from_local(x, w.region([w.first_site])).matrix
    quantum, classical = [], []
    for r in distances:
        Y = from_local(y, w.region([w.first_site + r])).matrix
        quantum.append(st.expect(X @ Y) - st.expect(X) * st.expect(Y))
        classical.append(_classical_correlation(pi, p0, np.diag(x), np.diag(y), r))
    quantum = np.array(quantum)
    classical = np.array(classical)
    ev = np.sort(np.abs(np.linalg.eigvals(pi)))[::-1]
    lam2 = float(ev[1]) if len(ev) > 1 else 0.0
    lam2 = 0.0 if lam2 < 1e-12 else lam2
    mags = np.abs(quantum)
    ok = mags > 1e-14
    rate, const = float("nan"), 0.0
    if ok.sum() >= 2:
        slope = np.polyfit(np.array(distances)[ok], np.log(mags[ok]), 1)[0]
        rate = float(np.exp(slope))
    if lam2 > 0:
        const = float(max(mags / lam2 ** np.array(distances)))
    ratios = mags[1:] / np.where(mags[:-1] > 0, mags[:-1], np.nan)
    agree = float(np.abs(quantum - classical).max())
    bound = float(max(mags - (const * lam2 ** np.array(distances) if lam2 > 0 else 0) - 1e-15, default=0.0))
    recs = [CheckRecord("mixing:classical-oracle", "mixing:exponential-mixing", agree, tol),
            CheckRecord("mixing:exponential-bound", "mixing:exponential-mixing", max(bound, 0.0), 1e-12)]
    return {"distances": distances, "correlations": quantum, "classical": classical, "ratios": ratios,
            "fitted_rate": rate, "lambda2": lam2, "constant": const, "records": recs}
