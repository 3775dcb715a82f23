"""Hermitian matrix functions through eigendecomposition."""
import numpy as np

from .errors import FaithfulnessError

EIG_FLOOR = 1e-12


def eigh_hermitian(x):
    x = np.asarray(x)
    return np.linalg.eigh((x + x.conj().swapaxes(-1, -2)) / 2)


def apply_hermitian(x, f):
    w, v = eigh_hermitian(x)
    return (v * f(w)[..., None, :]) @ v.conj().swapaxes(-1, -2)


def expm_hermitian(x, scale=1.0):
    """exp(scale * x) for Hermitian x; ``scale`` may be complex."""
    return apply_hermitian(x, lambda w: np.exp(scale * w))


def logm_positive(x, floor=EIG_FLOOR):
    """log x for positive definite x; raises below the floor instead of clamping."""
    w, v = eigh_hermitian(x)
    if w.min() < floor:
        raise FaithfulnessError(f"eigenvalue {w.min():.3e} below faithfulness floor {floor:.0e}")
    return (v * np.log(w)[..., None, :]) @ v.conj().swapaxes(-1, -2)


def sqrtm_psd(x, tol=1e-10):
    w, v = eigh_hermitian(x)
    if w.min() < -tol:
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {w.min():.3e})")
    return (v * np.sqrt(np.clip(w, 0, None))[..., None, :]) @ v.conj().swapaxes(-1, -2)


def inv_positive(x, floor=EIG_FLOOR):
    w, v = eigh_hermitian(x)
    if w.min() < floor:
        raise FaithfulnessError(f"eigenvalue {w.min():.3e} below faithfulness floor {floor:.0e}")
    return (v / w[..., None, :]) @ v.conj().swapaxes(-1, -2)


def condition_number(x):
    w = np.linalg.eigvalsh((x + x.conj().T) / 2)
    return float(w.max() / w.min()) if w.min() > 0 else float("inf")
