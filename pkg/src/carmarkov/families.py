"""Construction of the demo families from a parameter dictionary."""
from dataclasses import dataclass, field

import numpy as np

from .algebra import L_MAX
from .errors import ConfigError
from .markov_state import (build_state, hopping_amplitudes, ising_amplitudes, ising_constraint_gap,
                           load_sequence, trivial_amplitudes)
from .structure import FULL, SCALAR, product_state, two_block_state

FAMILIES = ("trivial", "ising", "hopping", "product", "two_block", "from_files")
MARKOV_FAMILIES = ("trivial", "ising", "hopping", "from_files")


@dataclass
class Family:
    name: str
    params: dict
    state: object
    rep: object = None
    seq: object = None
    demo: object = None
    extra: dict = field(default_factory=dict)

    @property
    def window(self):
        return self.state.window

    @property
    def source(self):
        """What the structure routines classify: the constructed state when there is one."""
        if self.rep is not None:
            return self.rep
        return self.demo if self.demo is not None else self.state


def _float(params, key, default=None):
    v = params.get(key, default)
    if v is None:
        raise ConfigError(f"missing parameter {key!r}")
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"parameter {key!r} must be a number, got {v!r}") from None


def _complex_matrix(m):
    """Nested lists of numbers or [re, im] pairs or strings like '0.1j'."""
    def conv(v):
        if isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(t, (int, float)) for t in v):
            return complex(v[0], v[1])
        return complex(v)
    return np.array([[conv(v) for v in row] for row in m], dtype=complex)


def validate(name, length, params):
    """Raise ConfigError for parameters outside the family's preconditions."""
    if name not in FAMILIES:
        raise ConfigError(f"unknown family {name!r}; expected one of {FAMILIES}")
    if name != "from_files":
        if not isinstance(length, int) or not 2 <= length <= L_MAX:
            raise ConfigError(f"window length must be an integer in [2, {L_MAX}], got {length!r}")
    if name == "ising":
        vals = [_float(params, k) for k in ("alpha", "beta", "gamma", "delta", "h")]
        if ising_constraint_gap(*vals) > 1e-12:
            raise ConfigError("Ising parameters violate e^{h alpha} + e^{h beta} = e^{h gamma} + e^{h delta}")
    elif name == "hopping":
        _float(params, "h")
    elif name == "product":
        occ = _occupations(params, length)
        if any(not 0 < p < 1 for p in occ):
            raise ConfigError("occupations must lie strictly between 0 and 1")
        if params.get("pattern", FULL) not in (FULL, SCALAR):
            raise ConfigError("product pattern must be Full or Scalar")
    elif name == "two_block":
        if "pairs" in params:
            par = np.diag([1.0, -1.0, -1.0, 1.0])
            for m in params["pairs"]:
                p = _complex_matrix(m)
                if p.shape != (4, 4):
                    raise ConfigError("pair densities must be 4x4")
                if np.abs(p - p.conj().T).max() > 1e-12 or np.abs(p - par @ p @ par).max() > 1e-12:
                    raise ConfigError("pair densities must be Hermitian and even")
                if np.linalg.eigvalsh(p)[0] <= 0 or abs(np.trace(p).real - 1) > 1e-12:
                    raise ConfigError("pair densities must be positive definite with unit trace")
    elif name == "from_files":
        if not params.get("path"):
            raise ConfigError("from_files needs a 'path' to a sequence directory")


def _occupations(params, length):
    if "occupations" in params:
        occ = [float(p) for p in params["occupations"]]
        if len(occ) != length:
            raise ConfigError(f"expected {length} occupations, got {len(occ)}")
        return occ
    return [_float(params, "occupation", 0.3)] * length


def build_family(name, length, params=None):
    params = dict(params or {})
    validate(name, length, params)
    if name == "trivial":
        seq = trivial_amplitudes(length)
    elif name == "ising":
        seq = ising_amplitudes(*[_float(params, k) for k in ("alpha", "beta", "gamma", "delta", "h")], length)
    elif name == "hopping":
        seq = hopping_amplitudes(_float(params, "h"), length)
    elif name == "from_files":
        seq = load_sequence(params["path"])
    else:
        seq = None
    if seq is not None:
        rep = build_state(seq)
        return Family(name, params, rep.state, rep=rep, seq=seq, extra=dict(seq.params))
    if name == "product":
        demo = product_state(_occupations(params, length), params.get("pattern", FULL))
    else:
        pairs = [_complex_matrix(m) for m in params["pairs"]] if "pairs" in params else None
        demo = two_block_state(length, pairs)
    return Family(name, params, demo.state, demo=demo, extra=dict(demo.params))
