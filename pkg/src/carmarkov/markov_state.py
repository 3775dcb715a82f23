"""Markov states built from conditional density amplitudes.

Windows are ``[n_min, 0]``. An amplitude sequence holds even operators
``K[n] = K_{n-1,n}`` localized on ``{n-1, n}`` and an even positive
``w0`` on site 0. Cumulative amplitudes are
``Kb(n) = K_{n,n+1} ... K_{-1,0} w0^(1/2)`` and the density of the
volume ``[n, 0]`` is ``W_[n,0] = Kb(n)^* Kb(n)`` (normalized trace one).
"""
import json
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path

import numpy as np

from . import basis
from .algebra import (ChainOperator, ChainWindow, StateDensity, annihilator, creator, load_operator,
                      occupation_projection, op_norm, parity_matrix, save_operator, tau, to_local)
from .errors import ConstraintError, InvariantError, WindowError
from .expectations import CondExpMap, SubalgebraBasis, choi_check, membership_residual, segment_basis
from .linalg import expm_hermitian, sqrtm_psd
from .records import CheckRecord

TOL = 1e-9


def chain_window(length):
    """Window ``[-(length - 1), 0]``."""
    return ChainWindow(-(length - 1), length)


def _odd_norm(m, window):
    return op_norm((m - parity_matrix(m, window)) / 2)


def initial_projector(window, n):
    """Raw-matrix tau-conditional expectation onto sites <= n (scalars if n < first site)."""
    idx = tuple(range(0, n - window.first_site + 1)) if n >= window.first_site else ()
    mask = basis.region_mask(window.length, idx, "full")
    return lambda m: basis.project(m, window.length, mask)


def final_projector(window, n):
    """Raw-matrix tau-conditional expectation onto sites >= n."""
    idx = tuple(range(max(n - window.first_site, 0), window.length))
    mask = basis.region_mask(window.length, idx, "full")
    return lambda m: basis.project(m, window.length, mask)


@dataclass(frozen=True, eq=False)
class AmplitudeSequence:
    window: ChainWindow
    w0: ChainOperator
    amplitudes: dict
    family: str = "custom"
    params: dict = field(default_factory=dict)
    check_even: bool = True

    def __post_init__(self):
        w = self.window
        if w.last_site != 0:
            raise WindowError("amplitude windows must end at site 0")
        if sorted(self.amplitudes) != list(range(w.first_site + 1, 1)):
            raise WindowError(f"amplitudes must be indexed by {list(range(w.first_site + 1, 1))}")
        for op in [self.w0, *self.amplitudes.values()]:
            if op.window != w:
                raise WindowError("amplitude operators must live on the sequence window")
        if self.check_even:
            worst = max(_odd_norm(op.matrix, w) for op in [self.w0, *self.amplitudes.values()])
            if worst > 1e-12:
                raise ConstraintError(f"amplitudes must be even (odd part {worst:.2e})")
        for n, k in self.amplitudes.items():
            _, res = to_local(k, w.region([n - 1, n]))
            if res > 1e-10:
                raise WindowError(f"K_{{{n - 1},{n}}} is not localized on [{n - 1},{n}] (residual {res:.2e})")
        _, res = to_local(self.w0, w.region([0]))
        if res > 1e-10:
            raise WindowError(f"w0 is not localized on site 0 (residual {res:.2e})")

    @property
    def n_min(self):
        return self.window.first_site

    def K(self, n):
        return self.amplitudes[n].matrix


class CumulativeAmplitude:
    """Products ``Kb(n)`` and partial products ``Kb(n, k) = K_{n,n+1} ... K_{k-1,k}``."""

    def __init__(self, seq):
        self.seq = seq
        w = seq.window
        self.w0_sqrt = sqrtm_psd(seq.w0.matrix)
        full = {0: self.w0_sqrt}
        for n in range(-1, w.first_site - 1, -1):
            full[n] = seq.K(n + 1) @ full[n + 1]
        self._full = full

    def full(self, n):
        return self._full[n]

    def partial(self, n, k):
        eye = np.eye(self.seq.window.dim, dtype=complex)
        return reduce(np.matmul, [self.seq.K(m) for m in range(n + 1, k + 1)], eye)

    def recursion_residual(self):
        w = self.seq.window
        res = [op_norm(self.full(n - 1) - self.seq.K(n) @ self.full(n)) for n in range(w.first_site + 1, 1)]
        res += [op_norm(self.full(n) - self.partial(n, 0) @ self.w0_sqrt) for n in w.sites]
        return max(res)


def _scaled_diff(a, b):
    return float(op_norm(a - b))


def verify_amplitudes(seq, tol=TOL):
    """Check records for the three amplitude conditions plus evenness and localization."""
    w = seq.window
    eye = np.eye(w.dim)
    recs = []
    odd = max(_odd_norm(op.matrix, w) for op in [seq.w0, *seq.amplitudes.values()])
    recs.append(CheckRecord("amplitudes:evenness", "amplitudes:even-operators", odd, 1e-10))
    loc = max([to_local(seq.amplitudes[n], w.region([n - 1, n]))[1] for n in seq.amplitudes]
              + [to_local(seq.w0, w.region([0]))[1]])
    recs.append(CheckRecord("amplitudes:localization", "amplitudes:nearest-neighbour-support", loc, 1e-10))
    cond_i = [_scaled_diff(initial_projector(w, n - 1)(seq.K(n) @ seq.K(n).conj().T), eye)
              for n in range(w.first_site + 1, 0)]
    recs.append(CheckRecord("amplitudes:left-normalization", "amplitudes:condition-left",
                            max(cond_i, default=0.0), tol, detail="E_{n-1]}(K K^*) = I for n <= -1"))
    if 0 in seq.amplitudes:
        k0 = seq.K(0)
        cond_ii = _scaled_diff(initial_projector(w, -1)(k0 @ seq.w0.matrix @ k0.conj().T), eye)
    else:
        cond_ii = abs(tau(seq.w0.matrix) - 1)
    recs.append(CheckRecord("amplitudes:boundary-normalization", "amplitudes:condition-boundary", cond_ii, tol,
                            detail="E_{-1]}(K_{-1,0} w0 K_{-1,0}^*) = I"))
    cond_iii = [_scaled_diff(final_projector(w, n)(seq.K(n).conj().T @ seq.K(n)), eye)
                for n in range(w.first_site + 1, 0)]
    recs.append(CheckRecord("amplitudes:right-normalization", "amplitudes:condition-right",
                            max(cond_iii, default=0.0), tol, detail="E_[n(K^* K) = I for n <= -1"))
    return recs


def amplitude_conditions_hold(seq, tol=TOL):
    return all(r.passed for r in verify_amplitudes(seq, tol))


@dataclass(eq=False)
class MarkovStateRep:
    seq: AmplitudeSequence
    cumulative: CumulativeAmplitude
    densities: dict
    compatibility: list

    @property
    def window(self):
        return self.seq.window

    @property
    def state(self):
        """Density of the whole window."""
        return self.densities[self.window.first_site]

    def phi(self, x, volume=None):
        """phi_[volume,0](x) = tau(W_[volume,0] x); batch allowed."""
        n = self.window.first_site if volume is None else volume
        return self.densities[n].expect(x)


def build_state(seq, tol=TOL, strict=True):
    """Densities W_[n,0] for every volume and their compatibility records.

    With ``strict`` an incompatible family (on links covered by the right
    normalization) raises InvariantError; otherwise it is only recorded.
    """
    cum = CumulativeAmplitude(seq)
    w = seq.window
    dens = {}
    for n in w.sites:
        kb = cum.full(n)
        dens[n] = StateDensity(w, kb.conj().T @ kb, "unit_normalized_trace")
    recs = []
    proj = []
    for n in range(w.first_site + 1, 1):
        r = _scaled_diff(final_projector(w, n)(dens[n - 1].rho), dens[n].rho)
        if n <= -1:
            proj.append(r)
        else:
            recs.append(CheckRecord("build:compatibility-boundary", "markov:projectivity", r, tol, kind="info",
                                    detail="link [-1,0] -> [0,0] needs right normalization at site 0"))
    recs.insert(0, CheckRecord("build:projectivity", "markov:projectivity", max(proj, default=0.0), tol))
    norm = max(abs(tau(d.rho) - 1) for d in dens.values())
    recs.append(CheckRecord("build:normalization", "markov:density", norm, tol))
    pos = max(max(-np.linalg.eigvalsh(d.rho)[0], 0.0) for d in dens.values())
    recs.append(CheckRecord("build:positivity", "markov:density", pos, tol))
    even = max(_odd_norm(d.rho, w) for d in dens.values())
    recs.append(CheckRecord("build:evenness", "markov:even-state", even, 1e-10))
    recs.append(CheckRecord("build:recursion", "markov:cumulative-amplitude", cum.recursion_residual(), 1e-10))
    if strict and recs[0].residual >= tol:
        bad = [n for n in range(w.first_site + 1, 0) if _scaled_diff(
            final_projector(w, n)(dens[n - 1].rho), dens[n].rho) >= tol]
        raise InvariantError(f"volumes are not compatible (residual {recs[0].residual:.2e} at links {bad})")
    return MarkovStateRep(seq, cum, dens, recs)


def quasi_conditional_expectation(rep, n):
    """E_{n]}(x) = E_{n]}^tau(Kb(n) x Kb(n)^*), a module map over sites <= n-1."""
    w = rep.window
    kb = rep.cumulative.full(n)
    kbh = kb.conj().T
    proj = initial_projector(w, n)

    def apply(m):
        return proj(kb @ m @ kbh)

    rng = segment_basis(w, "initial_up_to", n)
    module = segment_basis(w, "initial_up_to", n - 1) if n - 1 >= w.first_site else segment_basis(w, "scalars")
    return CondExpMap(w, rng, apply, "quasi", module=module, label=f"E_{n}]")


def monomial_basis(window, sites):
    """All products over ``sites`` (increasing) of e11, e22, a, a^+; shape (4^|sites|, d, d)."""
    d = window.dim
    out = np.eye(d, dtype=complex)[None]
    for s in sites:
        gens = np.array([occupation_projection(window, s, 1).matrix, occupation_projection(window, s, 2).matrix,
                         annihilator(window, s).matrix, creator(window, s).matrix])
        out = np.matmul(out[:, None], gens[None]).reshape(-1, d, d)
    return out


def monomial_parities(n_sites):
    """Parity (0 even, 1 odd) of each monomial from :func:`monomial_basis`."""
    p = np.zeros(1, int)
    for _ in range(n_sites):
        p = (p[:, None] + np.array([0, 0, 1, 1])[None, :]).reshape(-1) % 2
    return p


def _sample(mons, sample, rng):
    if sample is None or sample >= len(mons):
        return mons
    return mons[np.sort(rng.choice(len(mons), size=sample, replace=False))]


def verify_markov(rep, rng=None, sample=None, tol=TOL, choi=True):
    """Check records for the Markov property of the constructed state.

    ``sample`` limits the monomial basis of each volume to a seeded random
    subset (None: full basis).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    w = rep.window
    d = w.dim
    eye = np.eye(d)
    cum = rep.cumulative
    phi = rep.phi
    recs = []
    chain, unital, local, module, theta, two_step, full_pres, cp = [], [], [], [], [], [], [], []
    mons_all = _sample(monomial_basis(w, w.sites), sample, rng)
    for h in w.sites:
        E = quasi_conditional_expectation(rep, h)
        unital.append(op_norm(E(eye) - eye))
        seg = segment_basis(w, "final_from", h)
        mons_h = _sample(monomial_basis(w, range(h, 1)), sample, rng)
        site_h = segment_basis(w, "single", h)
        local.append(float(membership_residual(E(mons_h), site_h).max()))
        ex = E(mons_all)
        theta.append(float(op_norm(parity_matrix(ex, w) - E(parity_matrix(mons_all, w))).max()))
        full_pres.append(float(np.abs(phi(ex) - phi(mons_all)).max()))
        c = E.module.random_element(rng)
        xs = rng.normal(size=(4, d, d)) + 1j * rng.normal(size=(4, d, d))
        module.append(float(max(op_norm(E(c @ xs) - c @ E(xs)).max(), op_norm(E(xs @ c) - E(xs) @ c).max())))
        if h <= -1:
            pair = monomial_basis(w, (h, h + 1))
            ep = E(pair)
            two_step.append(float(np.abs(phi(ep) - phi(pair)).max()))
            local.append(float(membership_residual(ep, site_h).max()))
        for n in range(w.first_site, h):
            mons_n = _sample(monomial_basis(w, range(n, 1)), sample, rng)
            knh = cum.partial(n, h)
            lhs = tau(knh @ E(mons_n) @ knh.conj().T)
            chain.append(float(np.abs(lhs - phi(mons_n, n)).max()))
        if choi and w.length <= 5:
            cp.append(max(-choi_check(E)["min_eigenvalue"], 0.0))
        del seg
    recs.append(CheckRecord("markov:chain-identity", "markov:markov-state", max(chain, default=0.0), tol,
                            detail="tau(Kb(n,h) E_h](x) Kb(n,h)^*) = phi_[n,0](x)"))
    recs.append(CheckRecord("markov:unitality", "markov:quasi-expectation", max(unital), tol))
    recs.append(CheckRecord("markov:localization", "markov:quasi-expectation", max(local), tol))
    recs.append(CheckRecord("markov:module", "expectations:quasi-module", max(module), tol))
    recs.append(CheckRecord("markov:theta-commutation", "markov:parity-commutation", max(theta), 1e-10))
    recs.append(CheckRecord("markov:two-step-preservation", "markov:two-step-markov", max(two_step, default=0.0),
                            tol, detail="phi(E_h](x)) = phi(x) for x on [h, h+1]"))
    par = monomial_parities(w.length)
    mons_full = monomial_basis(w, w.sites)
    recs.append(CheckRecord("markov:evenness", "markov:even-state",
                            float(np.abs(phi(mons_full[par == 1])).max()), 1e-10))
    if cp:
        recs.append(CheckRecord("markov:complete-positivity", "markov:complete-positivity", max(cp), tol))
    recs.append(CheckRecord("markov:full-preservation", "markov:markov-state", max(full_pres), tol, kind="info",
                            detail="phi(E_h](x)) = phi(x) on the whole window"))
    return recs


def state_eval(rep, x, volume=None):
    """phi(x) = tau(W_[volume,0] x) after checking x lives in the volume."""
    w = rep.window
    n = w.first_site if volume is None else volume
    if n not in w:
        raise WindowError(f"volume [{n},0] outside window")
    m = x.matrix if isinstance(x, ChainOperator) else np.asarray(x)
    res = membership_residual(m, segment_basis(w, "final_from", n))
    if np.max(res) > 1e-9:
        raise WindowError(f"operator not localized in [{n},0] (residual {np.max(res):.2e})")
    return rep.phi(m, n)


def reduced_eval(rep, x, n, k):
    """phi(x) for x on [n, k] from the truncated amplitude Kb(n, k+1) (Kb(n) when k = 0)."""
    m = x.matrix if isinstance(x, ChainOperator) else np.asarray(x)
    kk = rep.cumulative.full(n) if k >= 0 else rep.cumulative.partial(n, k + 1)
    return tau(kk @ m @ kk.conj().T)


def _site_ops(w, s):
    a = annihilator(w, s).matrix
    return a, a.conj().T


def ising_operator(window, n, coeffs):
    """c1 n_{n-1} n_n + c2 (1-n_{n-1}) n_n + c3 n_{n-1} (1-n_n) + c4 (1-n_{n-1})(1-n_n)."""
    occ = lambda s: occupation_projection(window, s, 2).matrix
    emp = lambda s: occupation_projection(window, s, 1).matrix
    c1, c2, c3, c4 = coeffs
    return (c1 * occ(n - 1) @ occ(n) + c2 * emp(n - 1) @ occ(n)
            + c3 * occ(n - 1) @ emp(n) + c4 * emp(n - 1) @ emp(n))


def ising_constraint_gap(alpha, beta, gamma, delta, h):
    """Printed admissibility gap |e^{h alpha} + e^{h beta} - e^{h gamma} - e^{h delta}| (relative)."""
    e = np.exp(h * np.array([alpha, beta, gamma, delta], float))
    return abs(e[0] + e[1] - e[2] - e[3]) / max(1.0, e.max())


def ising_admissible(alpha, beta, gamma, delta, h, tol=1e-12):
    """Both normalizations hold: also e^{h alpha} + e^{h gamma} = e^{h beta} + e^{h delta}."""
    e = np.exp(h * np.array([alpha, beta, gamma, delta], float))
    second = abs(e[0] + e[2] - e[1] - e[3]) / max(1.0, e.max())
    return ising_constraint_gap(alpha, beta, gamma, delta, h) <= tol and second <= tol


def ising_amplitudes(alpha, beta, gamma, delta, h, length=4):
    """Diagonal nearest-neighbour amplitudes K = exp(h B / 2) / sqrt(kappa)."""
    if ising_constraint_gap(alpha, beta, gamma, delta, h) > 1e-12:
        raise ConstraintError("Ising parameters violate e^{h alpha} + e^{h beta} = e^{h gamma} + e^{h delta}")
    w = chain_window(length)
    kappa = (np.exp(h * alpha) + np.exp(h * beta)) / 2
    amps, closed = {}, 0.0
    for n in range(w.first_site + 1, 1):
        b = ising_operator(w, n, (alpha, beta, gamma, delta))
        d_exp = expm_hermitian(b, h)
        d_closed = ising_operator(w, n, np.exp(h * np.array([alpha, beta, gamma, delta])))
        closed = max(closed, op_norm(d_exp - d_closed))
        amps[n] = ChainOperator(w, expm_hermitian(b, h / 2) / np.sqrt(kappa), w.region([n - 1, n]), "even")
    params = {"alpha": alpha, "beta": beta, "gamma": gamma, "delta": delta, "h": h,
              "kappa": float(kappa), "closed_form_residual": float(closed)}
    w0 = ChainOperator(w, np.eye(w.dim), w.region([0]), "even")
    return AmplitudeSequence(w, w0, amps, "ising", params)


def hopping_generator(window, n):
    """U_n = a_{n-1}^* a_n + a_n^* a_{n-1}."""
    a1, a1d = _site_ops(window, n - 1)
    a2, a2d = _site_ops(window, n)
    return a1d @ a2 + a2d @ a1


def closed_form_adjudication(h, window=None):
    """Residuals of the two candidate closed forms of exp(hU) and the normalizers.

    Returns ``hyperbolic_residual`` for I + sinh(h) U + (cosh h - 1) U^2,
    ``trigonometric_residual`` for the sin/cos variant, the numeric
    normalizer and both closed-form normalizers, and the projection
    residuals of U^2 = p + q.
    """
    w = ChainWindow(-1, 2) if window is None else window
    n = w.last_site
    u = hopping_generator(w, n)
    eye = np.eye(w.dim)
    ex = expm_hermitian(u, h)
    hyp = eye + np.sinh(h) * u + (np.cosh(h) - 1) * u @ u
    trig = eye + np.sin(h) * u + (np.cos(h) - 1) * u @ u
    a1, a1d = _site_ops(w, n - 1)
    a2, a2d = _site_ops(w, n)
    p = a1d @ a1 @ a2 @ a2d
    q = a1 @ a1d @ a2d @ a2
    e_left = initial_projector(w, n - 1)(ex)
    numeric = float(tau(e_left).real)
    return {
        "h": float(h),
        "hyperbolic_residual": float(op_norm(ex - hyp)),
        "trigonometric_residual": float(op_norm(ex - trig)),
        "normalizer_numeric": numeric,
        "normalizer_hyperbolic": float((1 + np.cosh(h)) / 2),
        "normalizer_printed": float((1 + np.cos(h)) / 2),
        "normalizer_scalar_residual": float(op_norm(e_left - numeric * eye)),
        "square_split_residual": float(op_norm(u @ u - p - q)),
        "projection_residual": float(max(op_norm(p @ p - p), op_norm(q @ q - q), op_norm(p @ q))),
        "power_residual": float(max(op_norm(np.linalg.matrix_power(u, 4) - u @ u),
                                    op_norm(np.linalg.matrix_power(u, 3) - u))),
    }


def hopping_amplitudes(h, length=4):
    """K = exp(h U / 2) / sqrt(alpha) with alpha fixed by the left normalization."""
    w = chain_window(length)
    amps = {}
    alphas = []
    for n in range(w.first_site + 1, 1):
        v = expm_hermitian(hopping_generator(w, n), h / 2)
        e_left = initial_projector(w, n - 1)(v @ v.conj().T)
        alpha = float(tau(e_left).real)
        if op_norm(e_left - alpha * np.eye(w.dim)) > 1e-9 or alpha <= 0:
            raise ConstraintError("left normalization cannot be met by a scalar rescaling")
        alphas.append(alpha)
        amps[n] = ChainOperator(w, v / np.sqrt(alpha), w.region([n - 1, n]), "even")
    adj = closed_form_adjudication(h)
    params = {"h": h, "alpha_norm": alphas[0] if alphas else float((1 + np.cosh(h)) / 2),
              "normalizer_hyperbolic": adj["normalizer_hyperbolic"],
              "normalizer_printed": adj["normalizer_printed"],
              "hyperbolic_residual": adj["hyperbolic_residual"],
              "trigonometric_residual": adj["trigonometric_residual"]}
    w0 = ChainOperator(w, np.eye(w.dim), w.region([0]), "even")
    return AmplitudeSequence(w, w0, amps, "hopping", params)


def trivial_amplitudes(length=4):
    w = chain_window(length)
    eye = np.eye(w.dim)
    amps = {n: ChainOperator(w, eye, w.region([n - 1, n]), "even") for n in range(w.first_site + 1, 1)}
    return AmplitudeSequence(w, ChainOperator(w, eye, w.region([0]), "even"), amps, "trivial", {})


def corrupted_amplitudes(seq, site=None, strength=0.3):
    """Copy of ``seq`` with K_{n-1,n} replaced by K (I + s n_{n-1} n_n) (negative control).

    The factor is even and local, so evenness and localization survive while
    the normalizations break.
    """
    w = seq.window
    n = w.first_site + 1 if site is None else site
    occ = occupation_projection(w, n - 1, 2).matrix @ occupation_projection(w, n, 2).matrix
    amps = dict(seq.amplitudes)
    amps[n] = ChainOperator(w, seq.K(n) @ (np.eye(w.dim) + strength * occ), w.region([n - 1, n]), "even")
    return AmplitudeSequence(w, seq.w0, amps, seq.family + "-corrupted", dict(seq.params))


def save_sequence(seq, directory):
    """Manifest plus one operator file pair per amplitude."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_operator(directory / "w0", seq.w0)
    files = {}
    for n, k in sorted(seq.amplitudes.items()):
        name = f"K_{n - 1}_{n}".replace("-", "m")
        save_operator(directory / name, k)
        files[str(n)] = name
    manifest = {"window_first": seq.window.first_site, "window_length": seq.window.length,
                "family": seq.family, "params": seq.params, "w0": "w0", "amplitudes": files}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory / "manifest.json"


def load_sequence(directory, check_even=True):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    w = ChainWindow(manifest["window_first"], manifest["window_length"])
    w0, _ = load_operator(directory / manifest["w0"])
    amps = {int(n): load_operator(directory / name)[0] for n, name in manifest["amplitudes"].items()}
    for op in [w0, *amps.values()]:
        if op.window != w:
            raise WindowError("operator file window does not match the manifest")
    return AmplitudeSequence(w, w0, amps, manifest["family"], manifest["params"], check_even)
