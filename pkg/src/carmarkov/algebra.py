"""Finite windows of the fermionic chain: generators, matrix units, parity.

Sites of a window ``[first, first + L - 1]`` are tensor factors in
increasing order. Single-site basis vector 0 is the unoccupied state, so
``a a^+`` projects onto it. The Jordan-Wigner string starts at the
leftmost site of the window.
"""
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import basis
from .errors import WindowError

L_MAX = 8
PARITY_TAGS = ("even", "odd", "mixed", "unknown")
NORMALIZATIONS = ("unit_trace", "unit_normalized_trace")

_V = np.diag([1.0, -1.0])
_S = np.array([[0.0, 1.0], [0.0, 0.0]])


@dataclass(frozen=True)
class ChainWindow:
    first_site: int
    length: int
    max_length: int = field(default=L_MAX, compare=False, repr=False)

    def __post_init__(self):
        if not 1 <= self.length <= self.max_length:
            raise WindowError(f"window length {self.length} outside [1, {self.max_length}]")

    @property
    def last_site(self):
        return self.first_site + self.length - 1

    @property
    def sites(self):
        return tuple(range(self.first_site, self.first_site + self.length))

    @property
    def dim(self):
        return 2 ** self.length

    def __contains__(self, site):
        return self.first_site <= site <= self.last_site

    def index(self, site):
        if site not in self:
            raise WindowError(f"site {site} not in window {self.sites}")
        return site - self.first_site

    def region(self, sites=()):
        return Region(self, tuple(sites))

    def segment(self, lo, hi):
        """Region of the sites ``lo..hi`` clipped to the window."""
        return Region(self, tuple(s for s in self.sites if lo <= s <= hi))

    def contains_window(self, other):
        return other.first_site in self and other.last_site in self


@dataclass(frozen=True)
class Region:
    window: ChainWindow
    sites: tuple = ()

    def __post_init__(self):
        s = tuple(sorted(set(int(v) for v in self.sites)))
        for v in s:
            self.window.index(v)
        object.__setattr__(self, "sites", s)

    @property
    def indices(self):
        return tuple(self.window.index(v) for v in self.sites)

    @property
    def is_contiguous(self):
        return not self.sites or self.sites[-1] - self.sites[0] + 1 == len(self.sites)

    def __len__(self):
        return len(self.sites)

    def __iter__(self):
        return iter(self.sites)

    def complement(self):
        return Region(self.window, tuple(v for v in self.window.sites if v not in self.sites))

    def local_window(self):
        """Window carrying the region as its own chain (contiguous labels)."""
        if not self.sites:
            raise WindowError("empty region has no local window")
        if not self.is_contiguous:
            return ChainWindow(0, len(self.sites), self.window.max_length)
        return ChainWindow(self.sites[0], len(self.sites), self.window.max_length)


@dataclass(frozen=True, eq=False)
class ChainOperator:
    window: ChainWindow
    matrix: np.ndarray
    localization: Region = None
    parity_tag: str = "unknown"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (self.window.dim, self.window.dim):
            raise WindowError(f"matrix shape {m.shape} does not match window dimension {self.window.dim}")
        if self.parity_tag not in PARITY_TAGS:
            raise ValueError(f"parity_tag must be one of {PARITY_TAGS}")
        if self.localization is not None and self.localization.window != self.window:
            raise WindowError("localization region belongs to another window")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def _wrap(self, m, tag="unknown"):
        return ChainOperator(self.window, m, parity_tag=tag)

    def _other(self, y):
        if isinstance(y, ChainOperator):
            if y.window != self.window:
                raise WindowError("operands live on different windows")
            return y.matrix
        return None

    def __add__(self, y):
        m = self._other(y)
        if m is None:
            m = y * np.eye(self.window.dim)
        return self._wrap(self.matrix + m)

    __radd__ = __add__

    def __sub__(self, y):
        return self + (-1) * y

    def __rsub__(self, y):
        return (-1) * self + y

    def __neg__(self):
        return self._wrap(-self.matrix, self.parity_tag)

    def __mul__(self, c):
        if isinstance(c, ChainOperator):
            return NotImplemented
        return self._wrap(c * self.matrix, self.parity_tag)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / c)

    def __matmul__(self, y):
        return self._wrap(self.matrix @ self._other(y))

    @property
    def H(self):
        return adjoint(self)

    def norm(self):
        return op_norm(self)


@dataclass(frozen=True, eq=False)
class StateDensity:
    window: ChainWindow
    rho: np.ndarray
    normalization: str = "unit_normalized_trace"

    def __post_init__(self):
        r = np.asarray(self.rho, dtype=complex)
        if r.shape != (self.window.dim, self.window.dim):
            raise WindowError("density shape does not match window")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        r.setflags(write=False)
        object.__setattr__(self, "rho", r)

    def tau_density(self):
        """Density W with phi(x) = tau(W x)."""
        if self.normalization == "unit_trace":
            return self.rho * self.window.dim
        return self.rho

    def unit_trace_density(self):
        return self.tau_density() / self.window.dim

    def expect(self, x):
        """phi(x) for a matrix or batch of matrices."""
        x = x.matrix if isinstance(x, ChainOperator) else np.asarray(x)
        w = self.tau_density()
        return np.einsum("ij,...ji->...", w, x) / self.window.dim

    def validate(self, tol=1e-9, faithfulness_floor=None):
        """Return ``(hermiticity, min_eigenvalue, normalization_error)``; raise on violation."""
        from .errors import FaithfulnessError
        r = self.rho
        herm = np.abs(r - r.conj().T).max()
        ev = np.linalg.eigvalsh((r + r.conj().T) / 2)
        target = 1.0 if self.normalization == "unit_trace" else float(self.window.dim)
        nerr = abs(np.trace(r) - target) / target
        if herm > tol or ev[0] < -tol * target or nerr > tol:
            raise ValueError(f"invalid density: hermiticity {herm:.2e}, min eig {ev[0]:.2e}, trace error {nerr:.2e}")
        if faithfulness_floor is not None and ev[0] / target * self.window.dim < faithfulness_floor:
            raise FaithfulnessError(f"density not faithful: min eigenvalue {ev[0]:.3e}")
        return herm, ev[0], nerr


def _as_matrix(x):
    return x.matrix if isinstance(x, ChainOperator) else np.asarray(x)


def _kron(mats):
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def identity(window):
    return ChainOperator(window, np.eye(window.dim), window.region(), "even")


def annihilator(window, site):
    """a_site with V strings on every window site to its left."""
    k = window.index(site)
    mats = [_V] * k + [_S] + [np.eye(2)] * (window.length - k - 1)
    return ChainOperator(window, _kron(mats), window.region([site]), "odd")


def creator(window, site):
    return adjoint(annihilator(window, site))


def matrix_unit(window, site, m, n):
    """Matrix unit e_mn(site), m, n in {1, 2}; index 1 is the unoccupied level."""
    if m not in (1, 2) or n not in (1, 2):
        raise ValueError("matrix unit indices must be 1 or 2")
    k = window.index(site)
    e = np.zeros((2, 2))
    e[m - 1, n - 1] = 1.0
    mats = [np.eye(2)] * k + [e] + [np.eye(2)] * (window.length - k - 1)
    tag = "even" if m == n else "unknown"
    return ChainOperator(window, _kron(mats), window.region([site]) if m == n else None, tag)


def occupation_projection(window, site, i):
    """P_i at ``site``: i = 1 unoccupied (a a^+), i = 2 occupied (a^+ a)."""
    return matrix_unit(window, site, i, i)


def parity_operator(window):
    return ChainOperator(window, _kron([_V] * window.length), None, "even")


def _parity_diag(window):
    return np.array([(-1) ** bin(i).count("1") for i in range(window.dim)], dtype=float)


def parity_matrix(x, window):
    """Theta on raw matrices (batch allowed)."""
    p = _parity_diag(window)
    return np.asarray(x) * p[:, None] * p[None, :]


def parity(x):
    """Theta(x) = P x P with P the product of V over the window."""
    m = parity_matrix(x.matrix, x.window)
    tag = {"odd": "odd", "even": "even"}.get(x.parity_tag, "unknown")
    return ChainOperator(x.window, m, x.localization, tag)


def parity_decompose(x):
    t = parity(x).matrix
    plus = ChainOperator(x.window, (x.matrix + t) / 2, x.localization, "even")
    minus = ChainOperator(x.window, (x.matrix - t) / 2, x.localization, "odd")
    return plus, minus


def odd_part_norm(x):
    m = _as_matrix(x)
    w = x.window if isinstance(x, ChainOperator) else None
    if w is None:
        raise TypeError("odd_part_norm needs a ChainOperator")
    return op_norm((m - parity_matrix(m, w)) / 2)


def adjoint(x):
    return ChainOperator(x.window, x.matrix.conj().T, x.localization, x.parity_tag)


def commutator(x, y):
    a, b = _as_matrix(x), _as_matrix(y)
    out = a @ b - b @ a
    return ChainOperator(x.window, out) if isinstance(x, ChainOperator) else out


def anticommutator(x, y):
    a, b = _as_matrix(x), _as_matrix(y)
    out = a @ b + b @ a
    return ChainOperator(x.window, out) if isinstance(x, ChainOperator) else out


def op_norm(x):
    """Largest singular value; batches give an array."""
    m = _as_matrix(x)
    if m.size == 0:
        return 0.0
    return np.linalg.norm(m, ord=2, axis=(-2, -1))


def trace(x):
    return np.trace(_as_matrix(x), axis1=-2, axis2=-1)


def tau(x):
    m = _as_matrix(x)
    return np.trace(m, axis1=-2, axis2=-1) / m.shape[-1]


def embed(x, target):
    """Carry ``x`` from its window into the larger window ``target``.

    The image of a_k is a_k built natively on ``target``; an operator is
    rebuilt from its generator expansion rather than tensor-padded.
    """
    src = x.window
    if not target.contains_window(src):
        raise WindowError(f"window {src.sites} is not contained in {target.sites}")
    return from_local(x.matrix, target.region(src.sites), x.parity_tag)


def from_local(m, region, parity_tag="unknown"):
    """Image of a matrix on the region's own chain inside the region's window."""
    w = region.window
    r = len(region)
    m = np.asarray(m)
    lead = m.shape[:-2]
    if r == 0:
        out = m[..., :1, :1] * np.eye(w.dim)
        return ChainOperator(w, out, region, "even") if not lead else out
    c = basis.to_coeffs(m, r).reshape(lead + (-1,))
    g = np.zeros(lead + (4 ** w.length,), dtype=complex)
    g[..., basis.region_index_map(w.length, region.indices)] = c
    out = basis.from_coeffs(g.reshape(lead + (4,) * w.length), w.length)
    if lead:
        return out
    return ChainOperator(w, out, region, parity_tag)


def to_local(x, region):
    """Matrix on the region's own chain whose image is the region part of ``x``.

    Returns ``(local_matrix, residual)`` where the residual is the HS norm
    (under tau) of the part of ``x`` outside the region subalgebra.
    """
    w = region.window
    m = _as_matrix(x)
    lead = m.shape[:-2]
    c = basis.to_coeffs(m, w.length)
    flat = c.reshape(lead + (-1,))
    r = len(region)
    idx = basis.region_index_map(w.length, region.indices)
    loc = flat[..., idx]
    inside = np.zeros(flat.shape[-1], bool)
    inside[idx] = True
    rest = flat[..., ~inside]
    if r == 0:
        return loc[..., :1, None] * np.ones((1, 1)), _coeff_norm(rest, w.length, ~inside)
    loc = basis.from_coeffs(loc.reshape(lead + (4,) * r), r)
    return loc, _coeff_norm(rest, w.length, ~inside)


def _coeff_norm(rest, L, sel):
    if rest.shape[-1] == 0:
        return 0.0
    # tau-norm of each product element is 2^(-#odd/2)
    mu = basis._multi_index(L)[:, sel]
    wts = 0.5 ** (mu >= 2).sum(0)
    return np.sqrt((np.abs(rest) ** 2 * wts).sum(-1))


def save_operator(path, x, normalization="none"):
    """Write ``path.bin`` (little-endian complex128, row-major) and ``path.hdr``."""
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".bin", ".hdr") else path
    data = np.ascontiguousarray(x.matrix, dtype="<c16")
    base.with_suffix(".bin").write_bytes(data.tobytes())
    loc = "none" if x.localization is None else ",".join(str(s) for s in x.localization.sites)
    hdr = [
        f"window_first: {x.window.first_site}",
        f"window_length: {x.window.length}",
        f"localization: {loc}",
        f"parity_tag: {x.parity_tag}",
        f"normalization: {normalization}",
    ]
    base.with_suffix(".hdr").write_text("\n".join(hdr) + "\n")
    return base


def read_header(path):
    base = Path(path)
    base = base.with_suffix("") if base.suffix in (".bin", ".hdr") else base
    out = {}
    for line in base.with_suffix(".hdr").read_text().splitlines():
        if line.strip():
            k, v = line.split(":", 1)
            out[k.strip()] = v.strip()
    return base, out


def load_operator(path, max_length=L_MAX):
    """Inverse of :func:`save_operator`; returns ``(operator, normalization)``."""
    base, hdr = read_header(path)
    w = ChainWindow(int(hdr["window_first"]), int(hdr["window_length"]), max_length)
    raw = np.frombuffer(base.with_suffix(".bin").read_bytes(), dtype="<c16")
    if raw.size != w.dim ** 2:
        raise WindowError(f"operator file holds {raw.size} entries, expected {w.dim ** 2}")
    loc = hdr.get("localization", "none")
    region = None if loc == "none" else w.region(int(s) for s in loc.split(",") if s)
    op = ChainOperator(w, raw.reshape(w.dim, w.dim).astype(complex), region, hdr.get("parity_tag", "unknown"))
    return op, hdr.get("normalization", "none")


def reduced_density(state, sites):
    """Unit-trace density of the restriction of ``state`` to the sites' subalgebra.

    The matrix acts on the region's own chain, so that
    phi(from_local(y)) = Tr(rho y).
    """
    region = state.window.region(sites)
    loc, _ = to_local(state.tau_density(), region)
    return loc / 2 ** len(region)


def car_checks(window, tol=1e-12):
    """Anticommutation, matrix-unit and string relations on ``window``, as check records."""
    from .records import CheckRecord
    sites = window.sites
    a = {s: annihilator(window, s).matrix for s in sites}
    ad = {s: a[s].conj().T for s in sites}
    eye = np.eye(window.dim)
    zero_anti = unit_anti = 0.0
    for i in sites:
        for j in sites:
            zero_anti = max(zero_anti, float(op_norm(anticommutator(a[i], a[j]))))
            unit_anti = max(unit_anti, float(op_norm(anticommutator(a[i], ad[j]) - (i == j) * eye)))
    e = {(s, m, n): matrix_unit(window, s, m, n).matrix for s in sites for m in (1, 2) for n in (1, 2)}
    prod = comm = adj = 0.0
    for s in sites:
        for m, n, p, q in itertools.product((1, 2), repeat=4):
            prod = max(prod, float(op_norm(e[s, m, n] @ e[s, p, q] - (n == p) * e[s, m, q])))
        adj = max(adj, float(op_norm(e[s, 1, 2].conj().T - e[s, 2, 1])))
        adj = max(adj, float(op_norm(e[s, 1, 1] + e[s, 2, 2] - eye)))
        for t in sites:
            if t != s:
                comm = max(comm, float(op_norm(commutator(e[s, 1, 2], e[t, 2, 1]))))
    link = string = 0.0
    left = eye.copy()
    for s in sites:
        link = max(link, float(op_norm(a[s] @ ad[s] - e[s, 1, 1])), float(op_norm(ad[s] @ a[s] - e[s, 2, 2])))
        string = max(string, float(op_norm(left @ a[s] - e[s, 1, 2])))
        left = left @ (eye - 2 * ad[s] @ a[s])
    anchor = "algebra:car"
    return [CheckRecord("car:anticommutation-aa", anchor, zero_anti, tol),
            CheckRecord("car:anticommutation-aa+", anchor, unit_anti, tol),
            CheckRecord("car:matrix-unit-products", anchor, prod, tol),
            CheckRecord("car:matrix-unit-adjoint-sum", anchor, adj, tol),
            CheckRecord("car:matrix-unit-commutation", anchor, comm, tol),
            CheckRecord("car:occupation-link", anchor, link, tol),
            CheckRecord("car:string-identity", anchor, string, tol)]
