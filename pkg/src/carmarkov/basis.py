"""Product-basis coefficients for operators on a chain of qubits.

Every operator on L sites expands uniquely in products of the single-site
matrices ``I, V, s, s^T`` (indices 0..3), with ``V = diag(1, -1)`` and
``s = [[0, 1], [0, 0]]``. Subalgebras generated by creation/annihilation
operators on a set of sites, their even parts and their diagonals are all
spanned by subsets of this basis, so Hilbert-Schmidt projections onto them
are coefficient masks.
"""
from functools import lru_cache

import numpy as np

# rows: coefficients of I, V, s, s^T; columns: flattened (row, col) of a 2x2 block
_T = np.array([[0.5, 0, 0, 0.5], [0.5, 0, 0, -0.5], [0, 1, 0, 0], [0, 0, 1, 0]])
_TINV = np.linalg.inv(_T)

SINGLE_SITE = np.array([
    np.eye(2),
    np.diag([1.0, -1.0]),
    np.array([[0.0, 1.0], [0.0, 0.0]]),
    np.array([[0.0, 0.0], [1.0, 0.0]]),
])


def _apply_sitewise(t, mat, nb, L):
    for k in range(L):
        t = np.moveaxis(np.tensordot(t, mat, axes=([nb + k], [1])), -1, nb + k)
    return t


def to_coeffs(x, L):
    """Coefficient tensor of shape ``(..., 4, ..., 4)`` for matrices ``(..., 2^L, 2^L)``."""
    x = np.asarray(x)
    lead = x.shape[:-2]
    nb = len(lead)
    t = x.reshape(lead + (2,) * (2 * L))
    perm = list(range(nb)) + [nb + v for k in range(L) for v in (k, L + k)]
    t = t.transpose(perm).reshape(lead + (4,) * L)
    return _apply_sitewise(t, _T, nb, L)


def from_coeffs(c, L):
    """Inverse of :func:`to_coeffs`."""
    c = np.asarray(c)
    lead = c.shape[:c.ndim - L]
    nb = len(lead)
    t = _apply_sitewise(c, _TINV, nb, L)
    t = t.reshape(lead + (2, 2) * L)
    perm = list(range(nb)) + [nb + 2 * k for k in range(L)] + [nb + 2 * k + 1 for k in range(L)]
    d = 2 ** L
    return t.transpose(perm).reshape(lead + (d, d))


@lru_cache(maxsize=None)
def _multi_index(L):
    return np.indices((4,) * L).reshape(L, -1)


def _forced_string(mu, in_region):
    """Parity of odd factors on region sites strictly to the right of each site."""
    odd = (mu >= 2) & in_region[:, None]
    after = np.cumsum(odd[::-1], axis=0)[::-1] - odd
    return after % 2, odd


@lru_cache(maxsize=None)
def region_mask(L, idx, kind="full"):
    """Boolean mask of product-basis elements spanning a region subalgebra.

    ``idx`` are window positions (0-based); ``kind`` is ``full``, ``even``
    or ``diagonal``. Positions outside ``idx`` carry the string factor V
    exactly when an odd number of odd factors sits on region sites to
    their right.
    """
    mu = _multi_index(L)
    inr = np.zeros(L, bool)
    inr[list(idx)] = True
    right, odd = _forced_string(mu, inr)
    ok = np.ones(mu.shape[1], bool)
    for k in range(L):
        if not inr[k]:
            ok &= mu[k] == right[k]
    if kind == "even":
        ok &= odd.sum(0) % 2 == 0
    elif kind == "diagonal":
        ok &= ~odd.any(0)
    elif kind != "full":
        raise ValueError(f"unknown mask kind {kind!r}")
    m = ok.reshape((4,) * L)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=None)
def lift_mask(L, idx):
    """Mask of the range of the diagonal lift at positions ``idx``."""
    mu = _multi_index(L)
    ok = np.ones(mu.shape[1], bool)
    for k in idx:
        ok &= mu[k] < 2
    m = ok.reshape((4,) * L)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=None)
def region_index_map(L, idx):
    """Flat product-basis indices of the image of a local region basis.

    Entry ``i`` is where the i-th local product element (over ``len(idx)``
    sites, row-major) lands after inserting the string factors.
    """
    r = len(idx)
    loc = _multi_index(r) if r else np.zeros((0, 1), int)
    mu = np.zeros((L, loc.shape[1]), int)
    inr = np.zeros(L, bool)
    inr[list(idx)] = True
    mu[list(idx)] = loc
    right, _ = _forced_string(mu, inr)
    for k in range(L):
        if not inr[k]:
            mu[k] = right[k]
    flat = np.ravel_multi_index(tuple(mu), (4,) * L) if L else np.zeros(1, int)
    flat.setflags(write=False)
    return flat


def project(x, L, mask):
    """Hilbert-Schmidt projection of ``x`` (batch allowed) onto the span of a mask."""
    return from_coeffs(to_coeffs(x, L) * mask, L)


def basis_elements(L, mask):
    """Product-basis matrices selected by ``mask``, scaled to unit HS norm under tau."""
    out = []
    for flat in np.flatnonzero(mask.ravel()):
        mu = np.unravel_index(flat, (4,) * L)
        m = np.ones((1, 1))
        for k in mu:
            m = np.kron(m, SINGLE_SITE[k])
        nrm = np.sqrt(np.trace(m.conj().T @ m).real / m.shape[0])
        out.append(m / nrm)
    return np.array(out, dtype=complex).reshape(-1, 2 ** L, 2 ** L)
