"""Conditional expectations, their structure, ergodic limits and CP checks."""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import basis
from .algebra import ChainOperator, ChainWindow, Region, StateDensity, op_norm, parity_matrix
from .errors import InvariantError, WindowError
from .records import CheckRecord

SUPEROPERATOR_MAX_LENGTH = 6


def _mat(x):
    return x.matrix if isinstance(x, ChainOperator) else np.asarray(x)


def _tau_inner(b, x):
    """tau(b_i^* x) for a stack ``b`` of shape (N, d, d) and ``x`` (..., d, d)."""
    d = b.shape[-1]
    return np.einsum("nij,...ij->...n", b.conj(), x) / d


@dataclass(frozen=True, eq=False)
class SubalgebraBasis:
    """A unital *-subalgebra with a tau-orthonormal basis.

    Subalgebras spanned by product-basis elements are stored as a mask and
    projected in coefficient space; any other subalgebra keeps its basis
    explicitly as a stack of matrices.
    """
    window: ChainWindow
    descriptor: str
    region: Region = None
    mask: np.ndarray = None
    explicit: np.ndarray = None

    def __post_init__(self):
        if (self.mask is None) == (self.explicit is None):
            raise ValueError("exactly one of mask or explicit must be given")

    @property
    def matrices(self):
        if self.explicit is not None:
            return self.explicit
        return basis.basis_elements(self.window.length, self.mask)

    @property
    def elements(self):
        return [ChainOperator(self.window, m) for m in self.matrices]

    @property
    def dim(self):
        if self.mask is not None:
            return int(self.mask.sum())
        return self.explicit.shape[0]

    def project(self, x):
        """HS-orthogonal projection (batch allowed)."""
        m = _mat(x)
        if self.mask is not None:
            out = basis.project(m, self.window.length, self.mask)
        else:
            out = np.einsum("...n,nij->...ij", _tau_inner(self.explicit, m), self.explicit)
        if isinstance(x, ChainOperator):
            return ChainOperator(self.window, out, self.region)
        return out

    def coordinates(self, x):
        return _tau_inner(self.matrices, _mat(x))

    def random_element(self, rng, hermitian=False):
        d = self.window.dim
        m = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        if hermitian:
            m = m + m.conj().T
        return self.project(m)

    def validate(self, rng=None, samples=3):
        """Residuals of orthonormality, product closure, adjoint closure and unitality."""
        rng = np.random.default_rng(0) if rng is None else rng
        b = self.matrices
        g = _tau_inner(b, b)
        gram = np.abs(g - np.eye(len(b))).max()
        xs = [self.random_element(rng) for _ in range(samples)]
        closure = max(op_norm(x @ y - self.project(x @ y)) for x in xs for y in xs)
        adj = max(op_norm(x.conj().T - self.project(x.conj().T)) for x in xs)
        eye = np.eye(self.window.dim)
        unital = op_norm(eye - self.project(eye))
        return {"gram": float(gram), "closure": float(max(closure, adj)), "unital": float(unital)}


def orthonormal_span(window, mats, descriptor="custom", tol=1e-9, region=None):
    """Tau-orthonormal basis of the span of ``mats`` (numerical rank by ``tol``)."""
    mats = np.asarray(mats, dtype=complex).reshape(-1, window.dim, window.dim)
    a = mats.reshape(len(mats), -1).T / np.sqrt(window.dim)
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    r = int((s > tol * max(s.max(initial=0), 1)).sum())
    b = (u[:, :r] * np.sqrt(window.dim)).T.reshape(r, window.dim, window.dim)
    return SubalgebraBasis(window, descriptor, region, explicit=b)


_KINDS = ("initial_up_to", "final_from", "single", "pair", "full_region", "even_part_of", "diagonal_of", "scalars", "full")


def segment_basis(window, kind, arg=None):
    """Subalgebra basis for a segment or region of ``window``.

    ``kind`` is one of ``initial_up_to(n)``, ``final_from(n)``, ``single(n)``,
    ``pair(n)`` (sites n, n+1), ``full_region(sites)``, ``even_part_of(sites)``,
    ``diagonal_of(sites)``, ``scalars`` or ``full``.
    """
    L = window.length
    if kind == "initial_up_to":
        region, mk = window.segment(window.first_site, arg), "full"
        if arg < window.first_site:
            raise WindowError(f"initial segment up to {arg} is empty")
    elif kind == "final_from":
        region, mk = window.segment(arg, window.last_site), "full"
        if arg > window.last_site:
            raise WindowError(f"final segment from {arg} is empty")
    elif kind == "single":
        region, mk = window.region([arg]), "full"
    elif kind == "pair":
        region, mk = window.region([arg, arg + 1]), "full"
    elif kind == "full_region":
        region, mk = window.region(arg), "full"
    elif kind == "even_part_of":
        region, mk = window.region(arg), "even"
    elif kind == "diagonal_of":
        region, mk = window.region(arg), "diagonal"
    elif kind == "scalars":
        region, mk = window.region(), "full"
    elif kind == "full":
        region, mk = window.region(window.sites), "full"
    else:
        raise ValueError(f"unknown segment kind {kind!r}; expected one of {_KINDS}")
    descriptor = {"full": "full_region", "even": "even_part", "diagonal": "diagonal"}[mk]
    if not region.sites:
        descriptor = "scalars"
    return SubalgebraBasis(window, descriptor, region, mask=basis.region_mask(L, region.indices, mk))


def membership_residual(x, B):
    """Operator norm of the part of ``x`` orthogonal to the span of ``B``."""
    m = _mat(x)
    return op_norm(m - B.project(m))


class CondExpMap:
    """A (quasi-)conditional expectation on a window.

    ``apply`` acts on raw matrices with leading batch dimensions. ``domain``
    restricts the map to a subalgebra (None: whole window). ``kind`` is
    ``trace_preserving``, ``state_preserving`` (with ``state``) or ``quasi``
    (with ``module`` the subalgebra over which it is a bimodule map).
    """

    def __init__(self, window, range_basis, apply, kind="trace_preserving", state=None,
                 module=None, domain=None, label=""):
        if kind not in ("trace_preserving", "state_preserving", "quasi", "custom"):
            raise ValueError(f"unknown kind {kind!r}")
        if kind == "state_preserving" and state is None:
            raise ValueError("state_preserving maps need a state")
        self.window = window
        self.range = range_basis
        self._apply = apply
        self.kind = kind
        self.state = state
        self.module = module if module is not None else range_basis
        self.domain = domain
        self.label = label
        self._superop = None

    def __call__(self, x):
        out = self._apply(_mat(x))
        if isinstance(x, ChainOperator):
            return ChainOperator(self.window, out)
        return out

    def superoperator(self):
        """Matrix S with vec(E(x)) = S vec(x), row-major vec; cached once."""
        if self.window.length > SUPEROPERATOR_MAX_LENGTH:
            raise MemoryError(f"superoperator refused for L > {SUPEROPERATOR_MAX_LENGTH}")
        if self._superop is None:
            d = self.window.dim
            units = np.eye(d * d).reshape(d * d, d, d)
            out = self._apply(units.astype(complex))
            self._superop = out.reshape(d * d, d * d).T.copy()
            self._superop.setflags(write=False)
        return self._superop

    def compose(self, other, label=""):
        """self after other."""
        return CondExpMap(self.window, self.range, lambda m: self._apply(other._apply(m)), "custom",
                          label=label or f"{self.label}*{other.label}")


def hs_conditional_expectation(range_basis, tol=1e-10, label=""):
    """Tau-preserving conditional expectation onto ``range_basis``."""
    if range_basis.explicit is not None:
        b = range_basis.explicit
        gram = np.abs(_tau_inner(b, b) - np.eye(len(b))).max()
        if gram > tol:
            raise ValueError(f"range basis is not orthonormal (Gram residual {gram:.2e})")
    return CondExpMap(range_basis.window, range_basis, range_basis.project, "trace_preserving",
                      label=label or f"hs:{range_basis.descriptor}")


def segment_expectation(window, kind, arg=None):
    return hs_conditional_expectation(segment_basis(window, kind, arg), label=f"{kind}({arg})")


def state_preserving_expectation(state, range_basis, tol=1e-12, label=""):
    """The phi-orthogonal projection E(x) = sum_j b_j (G^-1)_ji phi(b_i^* x).

    It is a conditional expectation exactly when it is a range bimodule map;
    callers verify that with :func:`expectation_checks`.
    """
    w = state.tau_density()
    b = range_basis.matrices
    d = state.window.dim
    # phi(b_n^* b_m) = tau(w b_n^* b_m)
    gram = np.einsum("ij,nkj,mki->nm", w, b.conj(), b) / d
    ginv = np.linalg.pinv(gram, rcond=tol)

    def apply(m):
        # phi(b_i^* x) = tau(x w b_i^*) = sum (x w)_{jk} conj(b_i)_{jk} / d
        xw = m @ w
        c = np.einsum("nij,...ij->...n", b.conj(), xw) / d
        return np.einsum("...i,ji,jkl->...kl", c, ginv, b)

    return CondExpMap(state.window, range_basis, apply, "state_preserving", state=state,
                      label=label or f"phi:{range_basis.descriptor}")


def diagonal_lift_expectation(window, gamma):
    """Product of F_j(x) = P_1 x P_1 + P_2 x P_2 over the sites ``gamma``."""
    gamma = tuple(sorted(gamma))
    idx = tuple(window.index(j) for j in gamma)
    L = window.length
    occ = (np.arange(window.dim)[:, None] >> (L - 1 - np.arange(L))[None, :]) & 1
    projs = [1.0 - occ[:, k] for k in idx], [occ[:, k].astype(float) for k in idx]

    def apply(m):
        out = np.asarray(m, dtype=complex)
        for p1, p2 in zip(*projs):
            out = out * (np.outer(p1, p1) + np.outer(p2, p2))
        return out

    rng = SubalgebraBasis(window, "diagonal_lift", window.region(window.sites),
                          mask=basis.lift_mask(L, idx))
    return CondExpMap(window, rng, apply, "trace_preserving", label=f"lift{gamma}")


def choi_matrix(E, window=None):
    """Choi matrix sum_ij E_ij (x) E(E_ij)."""
    apply = E._apply if isinstance(E, CondExpMap) else E
    window = E.window if isinstance(E, CondExpMap) else window
    d = window.dim
    units = np.eye(d * d, dtype=complex).reshape(d, d, d, d)
    out = apply(units.reshape(d * d, d, d)).reshape(d, d, d, d)
    return out.transpose(0, 2, 1, 3).reshape(d * d, d * d)


def choi_check(E, window=None, tol=1e-9):
    """Minimal Choi eigenvalue and whether it clears ``-tol``."""
    c = choi_matrix(E, window)
    herm = float(np.abs(c - c.conj().T).max())
    mn = float(np.linalg.eigvalsh((c + c.conj().T) / 2)[0])
    return {"min_eigenvalue": mn, "is_cp": bool(mn >= -tol and herm < tol), "hermiticity": herm}


def transpose_map(window):
    """Transpose on the window: positive but not completely positive."""
    rng = segment_basis(window, "full")
    return CondExpMap(window, rng, lambda m: np.swapaxes(m, -1, -2), "custom", label="transpose")


def expectation_checks(E, rng, samples=4, tol=1e-9, anchor="expectations:conditional-expectation", choi=True,
                       domain=None):
    """Idempotence, unitality, bimodule, preservation and Choi residuals as check records."""
    w = E.window
    d = w.dim
    dom = domain if domain is not None else E.domain

    def sample():
        m = rng.normal(size=(samples, d, d)) + 1j * rng.normal(size=(samples, d, d))
        return dom.project(m) if dom is not None else m

    x = sample()
    ex = E(x)
    recs = []
    name = E.label or "map"
    idem = op_norm(E(ex) - ex).max()
    recs.append(CheckRecord(f"{name}:idempotence", anchor, idem, tol))
    eye = np.eye(d)
    recs.append(CheckRecord(f"{name}:unitality", anchor, op_norm(E(eye) - eye), tol))
    mod = E.module
    b1 = np.array([mod.random_element(rng) for _ in range(samples)])
    b2 = np.array([mod.random_element(rng) for _ in range(samples)])
    left = op_norm(E(b1 @ x @ b2) - b1 @ ex @ b2).max()
    recs.append(CheckRecord(f"{name}:bimodule", anchor, left, tol))
    if E.kind == "trace_preserving":
        pres = np.abs(np.trace(ex, axis1=-2, axis2=-1) - np.trace(x, axis1=-2, axis2=-1)).max() / d
        recs.append(CheckRecord(f"{name}:preservation", anchor, pres, tol))
    elif E.state is not None:
        pres = np.abs(E.state.expect(ex) - E.state.expect(x)).max()
        recs.append(CheckRecord(f"{name}:preservation", anchor, pres, tol))
    if choi:
        c = choi_check(E, tol=tol)
        recs.append(CheckRecord(f"{name}:choi", anchor, max(-c["min_eigenvalue"], 0.0), tol,
                                detail=f"min eigenvalue {c['min_eigenvalue']:.3e}"))
    return recs


def _commutant_basis(d, gens, extra_rows=()):
    """Orthonormal (Frobenius) basis of matrices commuting with all ``gens``."""
    eye = np.eye(d)
    rows = [np.kron(eye, g.T) - np.kron(g, eye) for g in gens]
    rows.extend(extra_rows)
    a = np.vstack(rows)
    ns = scipy.linalg.null_space(a, rcond=1e-10)
    return ns.T.reshape(-1, d, d)


def _null_space_abs(a, tol):
    """Right null space with an absolute singular value cutoff (columns of unit scale)."""
    _, sv, vh = np.linalg.svd(a)
    rank = int((sv > tol).sum())
    return vh[rank:].conj().T


def _generic_elements(B, rng, count=2):
    return [B.random_element(rng, hermitian=True) for _ in range(count)]


def _cluster(vals, tol):
    groups = []
    for i in np.argsort(vals):
        if groups and abs(vals[i] - vals[groups[-1][-1]]) < tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def structure_decompose(E, rng=None, tol=1e-9):
    """Minimal central projections of the range and the corner states.

    Returns a dict with ``projections`` (list of matrices), ``states``
    (callables y -> phi_i(y) on the relative commutant corner),
    ``relative_commutants`` (bases), ``reconstruction`` residual,
    ``factor_residual`` and ``corner_weights``.
    """
    rng = np.random.default_rng(7) if rng is None else rng
    w = E.window
    d = w.dim
    if w.length > 5:
        raise MemoryError("structure_decompose is limited to windows of length <= 5")
    B = E.range
    gens = _generic_elements(B, rng)
    comm = _commutant_basis(d, gens)
    # center = range intersected with its commutant
    proj = B.project(comm)
    diff = (comm - proj).reshape(len(comm), -1).T
    ns = _null_space_abs(diff, 1e-9) if diff.size else np.eye(len(comm))
    center = np.einsum("kn,kij->nij", ns, comm)
    if len(center) == 0:
        raise InvariantError("range has an empty center")
    coeff = rng.normal(size=len(center))
    z = np.einsum("n,nij->ij", coeff, center)
    z = (z + z.conj().T) / 2
    vals, vecs = np.linalg.eigh(z)
    groups = _cluster(vals, 1e-6 * max(1.0, np.abs(vals).max()))
    projections = [vecs[:, g] @ vecs[:, g].conj().T for g in groups]
    atom = max(op_norm(c - sum(np.trace(p @ c) / np.trace(p) * p for p in projections)) for c in center)
    spans = np.linalg.matrix_rank(np.array([p.ravel() for p in projections]))
    if atom > 1e-7 or spans != len(center):
        raise InvariantError(f"center not atomically spanned (residual {atom:.2e}, {spans} vs {len(center)})")
    eye = np.eye(d)
    xs = rng.normal(size=(3, d, d)) + 1j * rng.normal(size=(3, d, d))
    ex = E(xs)
    recon = sum(E(p @ xs @ p) @ p for p in projections)
    reconstruction = float(op_norm(ex - recon).max())
    states, commutants, factor_res, weights = [], [], 0.0, []
    for p in projections:
        q = eye - p
        extra = [np.kron(q, eye), np.kron(eye, q.T)]
        corner_gens = [p @ g @ p for g in gens]
        rel = _commutant_basis(d, corner_gens, extra)
        commutants.append(rel)
        trp = np.trace(p).real
        weights.append(trp / d)

        def phi_i(y, p=p, trp=trp):
            return np.trace(E(p @ _mat(y) @ p), axis1=-2, axis2=-1) / trp

        states.append(phi_i)
        a = p @ B.random_element(rng) @ p
        for y in rel:
            factor_res = max(factor_res, float(op_norm(E(a @ y) - a * phi_i(y))))
    return {
        "projections": projections,
        "states": states,
        "relative_commutants": commutants,
        "reconstruction": reconstruction,
        "factor_residual": factor_res,
        "corner_weights": weights,
        "corner_dimensions": [(int(round(np.trace(p).real)), len(r)) for p, r in zip(projections, commutants)],
    }


def _restricted_matrix(e, dom):
    """Matrix of ``e`` in the tau-orthonormal basis of ``dom`` and the leak out of it."""
    b = dom.matrices
    img = e(b)
    m = _tau_inner(b, img).T
    leak = float(op_norm(img - dom.project(img)).max())
    return m, leak


def cesaro_limit(m, log2_steps=12, extrapolate=True):
    """Cesaro average (1/k) sum_{h<k} m^h with k = 2^log2_steps, by doubling.

    The plain average carries an O(1/k) bias from non-unit eigenvalues;
    with ``extrapolate`` the combination 2 A_{2k} - A_k cancels it.
    """
    s = np.eye(len(m), dtype=complex)
    p = m.astype(complex)
    for _ in range(log2_steps):
        s = s + p @ s
        p = p @ p
    a_k = s / 2 ** log2_steps
    if not extrapolate:
        return a_k
    a_2k = (s + p @ s) / 2 ** (log2_steps + 1)
    return 2 * a_2k - a_k


def eigenvalue_one_projection(m, tol=1e-8):
    """Spectral projection of ``m`` onto the eigenvalue-1 eigenspace.

    The eigenvalue 1 of a contraction is semisimple, so the projection is
    R (L^* R)^-1 L^* with R and L spanning the right and left kernels of
    m - I. This stays accurate when m itself is defective.
    """
    vals = np.linalg.eigvals(m)
    if np.abs(vals).max() > 1 + 1e-8:
        raise InvariantError(f"spectral radius {np.abs(vals).max():.6f} exceeds 1")
    a = m - np.eye(len(m))
    r = scipy.linalg.null_space(a, rcond=tol)
    l = scipy.linalg.null_space(a.conj().T, rcond=tol)
    if r.shape[1] != l.shape[1]:
        raise InvariantError("eigenvalue 1 is not semisimple")
    if r.shape[1] == 0:
        return np.zeros_like(m, dtype=complex), vals
    return r @ np.linalg.solve(l.conj().T @ r, l.conj().T), vals


def ergodic_average(e, domain, state=None, rank_tol=1e-8, label="ergodic"):
    """Conditional expectation onto the fixed points of ``e`` restricted to ``domain``.

    ``e`` is a callable on matrices (batch allowed) mapping ``domain`` into
    itself. The result also carries ``cesaro_gap`` (distance to the
    extrapolated Cesaro average with k = 2^12), ``cesaro_plain_gap``,
    ``eigenvalues``, ``fixed_dim`` and ``algebra_residual`` as attributes.
    """
    m, leak = _restricted_matrix(e, domain)
    if leak > 1e-8:
        raise InvariantError(f"map leaves its domain (residual {leak:.2e})")
    q, vals = eigenvalue_one_projection(m)
    ces = cesaro_limit(m)
    ces_plain = cesaro_limit(m, extrapolate=False)
    u, s, _ = np.linalg.svd(q)
    r = int((s > rank_tol).sum())
    b = domain.matrices
    fixed = np.einsum("kn,kij->nij", u[:, :r], b)
    rb = orthonormal_span(domain.window, fixed)
    prod_res = 0.0
    for x in rb.matrices:
        for y in rb.matrices:
            prod_res = max(prod_res, float(op_norm(x @ y - rb.project(x @ y))))

    def apply(x):
        c = _tau_inner(b, x)
        return np.einsum("...k,nk,nij->...ij", c, q, b)

    kind = "state_preserving" if state is not None else "custom"
    E = CondExpMap(domain.window, rb, apply, kind, state=state, domain=domain, label=label)
    E.cesaro_gap = float(np.abs(ces - q).max())
    E.cesaro_plain_gap = float(np.abs(ces_plain - q).max())
    E.eigenvalues = vals
    E.fixed_dim = r
    E.algebra_residual = prod_res
    E.transfer_matrix = m
    return E


def parity_average(window):
    """x -> (x + Theta(x)) / 2."""
    rng = SubalgebraBasis(window, "even_part", window.region(window.sites),
                          mask=basis.region_mask(window.length, tuple(range(window.length)), "even"))
    return CondExpMap(window, rng, lambda m: (m + parity_matrix(m, window)) / 2, "trace_preserving",
                      label="parity-average")
