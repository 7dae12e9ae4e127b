"""Single-module atom-cavity model and single-module observables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.integrate import simpson
from scipy.linalg import expm
from scipy.optimize import minimize_scalar

from . import constants as K
from .qdyn import (
    DensityMatrix,
    EvolutionSpec,
    HilbertSpace,
    Operator,
    embed,
    evolve,
    liouvillian,
    reachable_subspace,
)

LEVELS = ("0g", "1g", "0e", "1e", "0", "1", "trap")
STIFF_LIMIT = 4e4  # generator_bound * duration above which RK4 is replaced by expm


def destroy(n):
    return np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1)


def ket(levels, name):
    v = np.zeros(len(levels))
    v[levels.index(name)] = 1.0
    return v


def outer(levels, a, b):
    return np.outer(ket(levels, a), ket(levels, b))


@dataclass(frozen=True)
class LevelScheme:
    """Seven atomic levels times two cavity modes truncated at ``n_max`` photons."""

    n_max: int = 1

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError("photon truncation must be >= 1")

    @property
    def levels(self):
        return LEVELS

    @property
    def space(self) -> HilbertSpace:
        n = self.n_max + 1
        return HilbertSpace((("atom", 7), ("a_minus", n), ("a_plus", n)))

    @property
    def dim(self):
        return 7 * (self.n_max + 1) ** 2

    def index(self, level, n_minus=0, n_plus=0):
        return self.space.index(LEVELS.index(level), n_minus, n_plus)

    def atom(self, a, b) -> Operator:
        return embed(outer(LEVELS, a, b), self.space, "atom")

    def mode(self, pol) -> Operator:
        label = {"-": "a_minus", "+": "a_plus"}[pol]
        return embed(destroy(self.n_max + 1), self.space, label)

    def qubit_ops(self):
        """X, Z and the qubit-subspace projector Z^2 on the {|0>, |1>} levels."""
        p0, p1 = self.atom("0", "0"), self.atom("1", "1")
        x = self.atom("0", "1") + self.atom("1", "0")
        return x, p0 - p1, p0 + p1


@dataclass(frozen=True)
class LightShift:
    delta: float
    t_on: float

    def __post_init__(self):
        if not self.t_on > 0:
            raise ValueError("light shift needs t_on > 0")


@dataclass(frozen=True)
class Pulse:
    """Square excitation pulse with area pi."""

    t_pi: float
    shape: str = "square"

    def __post_init__(self):
        if self.shape != "square":
            raise ValueError("only square pulses are modeled")
        if not self.t_pi > 0:
            raise ValueError("pulse duration must be positive")

    @property
    def omega(self):
        return math.pi / self.t_pi

    def area(self):
        return self.omega * self.t_pi


@dataclass(frozen=True)
class ModuleParams:
    g: float = K.G_MAX
    kappa: float = K.KAPPA
    Gamma: float = K.GAMMA
    R_br: float = K.R_BR
    Gamma3: float = K.GAMMA3
    delta_doppler: float = 0.0
    light_shift: LightShift | None = None
    pulse: Pulse | None = None
    n_max: int = 1

    def __post_init__(self):
        if self.g < 0 or self.kappa <= 0 or self.Gamma < 0 or self.Gamma3 < 0:
            raise ValueError("rates must be non-negative (kappa positive)")
        if not 0 < self.R_br <= 1:
            raise ValueError("R_br must lie in (0, 1]")

    def replace(self, **kw) -> "ModuleParams":
        return replace(self, **kw)

    @property
    def cooperativity(self):
        return 4 * self.g**2 / (self.kappa * self.Gamma)

    @property
    def scheme(self):
        return LevelScheme(self.n_max)


def cavity_zero_time(g, kappa, Gamma):
    """First zero of the cavity amplitude after an instantaneous excitation.

    Equals pi/g for kappa = Gamma; falls back to pi/g when the coupled
    system is overdamped.
    """
    disc = g**2 - ((kappa - Gamma) / 4) ** 2
    if g <= 0:
        return math.inf
    if disc <= 0:
        return math.pi / g
    return math.pi / math.sqrt(disc)


def shift_time(params: ModuleParams, g_assumed=None) -> float:
    g = params.g if g_assumed is None else g_assumed
    t0 = cavity_zero_time(g, params.kappa, params.Gamma)
    if params.pulse is not None:
        t0 += 0.5 * params.pulse.t_pi
    return t0


def with_shift(params: ModuleParams, delta_over_g, g_assumed=None) -> ModuleParams:
    """Attach a light shift of delta_over_g * g_assumed switched on at the cavity zero."""
    ga = params.g if g_assumed is None else g_assumed
    return params.replace(light_shift=LightShift(delta_over_g * ga, shift_time(params, ga)))


def detuning(params: ModuleParams, t) -> float:
    d = params.delta_doppler
    if params.light_shift is not None and t >= params.light_shift.t_on:
        d += params.light_shift.delta
    return d


def rabi(params: ModuleParams, t) -> float:
    p = params.pulse
    return p.omega if (p is not None and 0 <= t < p.t_pi) else 0.0


def _hamiltonian(scheme, g, delta, omega):
    H = Operator.zeros(scheme.space)
    am, ap = scheme.mode("-"), scheme.mode("+")
    if delta:
        H = H + delta * (scheme.atom("0e", "0e") + scheme.atom("1e", "1e"))
    if g:
        cpl = scheme.atom("0e", "0") @ am + scheme.atom("1e", "1") @ ap
        H = H + g * (cpl + cpl.dag())
    if omega:
        drv = scheme.atom("0e", "0g") + scheme.atom("1e", "1g")
        H = H + (omega / 2) * (drv + drv.dag())
    return H


def build_hamiltonian(params: ModuleParams, t: float) -> Operator:
    return _hamiltonian(params.scheme, params.g, detuning(params, t), rabi(params, t))


def build_jumps(params: ModuleParams) -> list:
    """c1..c8: free-space decay to trap, decay to the qubit levels, cavity loss, trap decay."""
    s = params.scheme
    G, R, G3 = params.Gamma, params.R_br, params.Gamma3
    return [
        math.sqrt(G * (1 - R)) * s.atom("trap", "0e"),
        math.sqrt(G * (1 - R)) * s.atom("trap", "1e"),
        math.sqrt(G * R) * s.atom("0", "0e"),
        math.sqrt(G * R) * s.atom("1", "1e"),
        math.sqrt(params.kappa) * s.mode("-"),
        math.sqrt(params.kappa) * s.mode("+"),
        math.sqrt(G3 / 2) * s.atom("0g", "trap"),
        math.sqrt(G3 / 2) * s.atom("1g", "trap"),
    ]


def initial_state(params: ModuleParams) -> DensityMatrix:
    s = params.scheme
    v = np.zeros(s.dim)
    a, b = ("0g", "1g") if params.pulse is not None else ("0e", "1e")
    v[s.index(a)] = v[s.index(b)] = 1.0
    return DensityMatrix.from_ket(s.space, v)


def pick_method(spec: EvolutionSpec) -> str:
    return "rk4" if spec.generator_bound() * (spec.stop - spec.start) < STIFF_LIMIT else "expm"


class ModuleModel:
    """Operators of one module compressed onto the subspace its dynamics can reach."""

    def __init__(self, params: ModuleParams, reduce=True, rho0: DensityMatrix | None = None):
        self.params = params
        s = self.scheme = params.scheme
        full = s.space
        rho0 = initial_state(params) if rho0 is None else rho0
        self._switch = []
        if params.pulse is not None:
            self._switch.append(params.pulse.t_pi)
        if params.light_shift is not None:
            self._switch.append(params.light_shift.t_on)
        self._switch = sorted(set(self._switch))
        times = [0.0] + self._switch
        H_full = [build_hamiltonian(params, t) for t in times]
        J_full = build_jumps(params)
        J_full = [c for c in J_full if np.any(c.entries)]
        am, ap = s.mode("-"), s.mode("+")
        X, Z, Pi = s.qubit_ops()
        if reduce:
            seeds = np.nonzero(np.abs(np.diag(rho0.entries)) > 0)[0]
            sub = reachable_subspace(full, H_full + J_full + [am, ap], seeds)
        else:
            sub = full.subspace(range(full.total_dim))
        self.space = sub
        r = lambda o: o.restrict(sub)
        self._H = {t: r(h) for t, h in zip(times, H_full)}
        self.jumps = [r(c) for c in J_full]
        self.a = {"-": r(am), "+": r(ap)}
        self.X, self.Z, self.Pi = r(X), r(Z), r(Pi)
        self.rho0 = rho0.restrict(sub)

    @property
    def dim(self):
        return self.space.total_dim

    def number(self, pol=None) -> Operator:
        if pol is None:
            return self.number("-") + self.number("+")
        a = self.a[pol]
        return a.dag() @ a

    def embed_state(self, m) -> np.ndarray:
        """Map a reduced-space matrix back to the full module space."""
        ix = np.asarray(self.space.indices)
        out = np.zeros((self.scheme.dim,) * 2, dtype=complex)
        out[np.ix_(ix, ix)] = m
        return out

    def spec(self, stop, step, start=0.0, tol=1e-10) -> EvolutionSpec:
        """Evolution spec on a uniform grid; switch times are snapped to grid points."""
        if self.params.pulse is not None:
            tp = self.params.pulse.t_pi
            step = tp / math.ceil(tp / step - 1e-9)
        n = max(1, int(round((stop - start) / step)))
        stop = start + n * step
        keys = sorted(self._H)
        hams, switches = [self._H[keys[0]]], []
        for t in keys[1:]:
            ts = start + round((t - start) / step) * step
            if ts >= stop:
                break
            if ts <= start:
                hams = [self._H[t]]
                continue
            hams.append(self._H[t])
            switches.append(ts)
        return EvolutionSpec(hams, switches, self.jumps, start, stop, step, tol)


@dataclass(frozen=True, eq=False)
class EmissionResult:
    times: np.ndarray
    output_trace: np.ndarray
    photon_amplitude_map: dict  # polarization -> kappa <a_p^dag a_p>(t)
    eta: float
    eta_exact: float
    truncated: bool
    method: str
    trace_error: float


def integrate_expectation(rho, spec: EvolutionSpec, observable, t_from=None) -> float:
    """Exact integral of Tr[B rho(t)] over [t_from, spec.stop].

    Each constant segment is propagated with the exponential of the
    Liouvillian augmented by a row that accumulates the integrand.
    """
    r = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho)
    d = spec.dim
    b = np.asarray(observable.entries if isinstance(observable, Operator) else observable).T.reshape(-1)
    t = spec.start if t_from is None else t_from
    bounds = [spec.start] + list(spec.switch_times) + [spec.stop]
    v = np.concatenate([r.reshape(-1), [0.0]]).astype(complex)
    for seg, (a, z) in enumerate(zip(bounds[:-1], bounds[1:])):
        L = liouvillian(spec.hamiltonians[seg], spec.jumps)
        lo = min(max(a, t), z)
        if lo > a:
            # advance the state to t_from without accumulating
            v[: d * d] = expm(L * (lo - a)) @ v[: d * d]
        if z <= lo:
            continue
        M = np.zeros((d * d + 1, d * d + 1), dtype=complex)
        M[: d * d, : d * d] = L
        M[d * d, : d * d] = b
        v = expm(M * (z - lo)) @ v
    return float(v[-1].real)


def emission_run(params: ModuleParams, window: float, n_grid=None, method="auto",
                 reduce=True) -> EmissionResult:
    """Master-equation run of one emission event over [0, window]."""
    model = ModuleModel(params, reduce=reduce)
    if n_grid is None:
        n_grid = max(200, int(math.ceil(window * params.Gamma * 60)))
    spec = model.spec(window, window / n_grid)
    m = pick_method(spec) if method == "auto" else method
    traj = evolve(model.rho0, spec, method=m)
    branch = {p: params.kappa * traj.expect(model.number(p)).real for p in "-+"}
    out = branch["-"] + branch["+"]
    eta = float(simpson(out, x=traj.times))
    eta_exact = integrate_expectation(model.rho0, spec, params.kappa * model.number())
    truncated = params.light_shift is None and window < 5 / params.Gamma
    return EmissionResult(traj.times, out, branch, eta, eta_exact, truncated, m, traj.trace_error())


def emitted_probability(params: ModuleParams, window: float, t_from=0.0) -> float:
    """Exact cavity-output probability between t_from and window."""
    model = ModuleModel(params)
    spec = model.spec(window, _snap_step(params, window))
    return integrate_expectation(model.rho0, spec, params.kappa * model.number(), t_from=t_from)


def _snap_step(params, window):
    # a step on which the shift time is (nearly) a grid point
    step = window / 400
    if params.light_shift is not None:
        t_on = params.light_shift.t_on
        step = t_on / max(1, round(t_on / step))
    return step


def eta_bound(params: ModuleParams):
    """Cavity branching fraction C/(C+1) of the excited-state decay.

    R_br only splits the free-space channel here, so it does not lower the
    bound; it enters the emission through g instead.
    """
    C = params.cooperativity
    return C / (C + 1)


@dataclass(frozen=True, eq=False)
class KappaScan:
    kappa: np.ndarray
    eta: np.ndarray
    eta0: np.ndarray
    cooperativity: np.ndarray
    kappa_opt: float
    eta_opt: float
    C_opt: float


def eta_vs_kappa(params: ModuleParams, kappa_grid, window=None, refine=True) -> KappaScan:
    """Emission probability versus cavity decay rate, with refined optimum."""
    window = 8 / params.Gamma if window is None else window
    kg = np.asarray(kappa_grid, dtype=float)
    if np.any(kg <= 0):
        raise ValueError("kappa grid must be positive")

    def eta_at(k):
        return emitted_probability(params.replace(kappa=float(k)), window)

    eta = np.array([eta_at(k) for k in kg])
    C = 4 * params.g**2 / (kg * params.Gamma)
    i = int(np.argmax(eta))
    k_opt, e_opt = kg[i], eta[i]
    if refine and 0 < i < len(kg) - 1:
        res = minimize_scalar(lambda lk: -eta_at(math.exp(lk)), bounds=(math.log(kg[i - 1]), math.log(kg[i + 1])),
                              method="bounded", options={"xatol": 1e-5})
        k_opt, e_opt = math.exp(res.x), -res.fun
    C_opt = 4 * params.g**2 / (k_opt * params.Gamma)
    return KappaScan(kg, eta, C / (C + 1), C, float(k_opt), float(e_opt), float(C_opt))


def gauss_hermite_normal(n=9):
    """Nodes and weights for expectations over a standard normal variable."""
    x, w = hermegauss(n)
    return x, w / math.sqrt(2 * math.pi)


@dataclass(frozen=True)
class ResidualResult:
    eps_r: float
    p_residual: float
    eta: float
    delta_over_g: float
    dg_over_g: float


def residual_photon(params: ModuleParams, delta_over_g, g_true=None, tail=None) -> float:
    """Cavity output emitted after the window end (the shift time) for one true coupling."""
    g_assumed = params.g
    true = params if g_true is None else params.replace(g=g_true)
    t_on = shift_time(params, g_assumed)
    if delta_over_g:
        true = true.replace(light_shift=LightShift(delta_over_g * g_assumed, t_on))
    else:
        true = true.replace(light_shift=None)
    tail = 60 / params.Gamma if tail is None else tail
    model = ModuleModel(true)
    # exact state at the window end, then exact tail integral
    spec0 = model.spec(t_on, t_on)
    rho_w = _propagate_exact(model.rho0.entries, spec0)
    tail_spec = EvolutionSpec([model._H[max(model._H)]] if delta_over_g else [model._H[0.0]], [],
                              model.jumps, t_on, t_on + tail, tail)
    return integrate_expectation(rho_w, tail_spec, true.kappa * model.number())


def _propagate_exact(r, spec: EvolutionSpec):
    bounds = [spec.start] + list(spec.switch_times) + [spec.stop]
    v = np.asarray(r, dtype=complex).reshape(-1)
    for seg, (a, z) in enumerate(zip(bounds[:-1], bounds[1:])):
        if z > a:
            v = expm(liouvillian(spec.hamiltonians[seg], spec.jumps) * (z - a)) @ v
    return v.reshape(spec.dim, spec.dim)


def residual_photon_error(params: ModuleParams, delta_over_g, dg_over_g=0.0, n_quad=9) -> ResidualResult:
    """Residual-photon error: leak after the window times the false-coincidence weight eta/2.

    The shift is timed for the nominal coupling; the true coupling is Gaussian
    with relative spread dg_over_g, averaged by Gauss-Hermite quadrature.
    """
    if dg_over_g > 0:
        x, w = gauss_hermite_normal(n_quad)
        vals = [residual_photon(params, delta_over_g, params.g * (1 + dg_over_g * xi)) for xi in x]
        p_res = float(np.dot(w, vals))
    else:
        p_res = residual_photon(params, delta_over_g)
    t_on = shift_time(params)
    eta = emitted_probability(params.replace(light_shift=None), t_on)
    return ResidualResult(p_res * eta / 2, p_res, eta, float(delta_over_g), float(dg_over_g))


# ---------------------------------------------------------------- absorption

SPEC_LEVELS = ("0", "1", "ea", "eb", "ec", "ed", "trap")


@dataclass(frozen=True)
class AbsorptionResult:
    delta_over_g: float
    p_x: float
    p_y: float
    p_z: float
    p_leak: float

    @property
    def total(self):
        return self.p_x + self.p_y + self.p_z + self.p_leak


def _spectator_ops(params, coupling, space, delta):
    """Hamiltonian and jumps of a spectator atom held in the qubit levels."""
    G, R = params.Gamma, params.R_br
    at = lambda a, b: embed(outer(SPEC_LEVELS, a, b), space, "spectator")
    am = embed(destroy(params.n_max + 1), space, "a_minus")
    ap = embed(destroy(params.n_max + 1), space, "a_plus")
    if coupling == "scheme":
        # the emitter's own selection rules: |0> couples via a-, |1> via a+
        links = [("ea", "0", am, 1.0), ("eb", "1", ap, 1.0)]
        decays = [("0", "ea", R), ("1", "eb", R)]
        excited = ("ea", "eb")
    elif coupling == "isotropic":
        # both qubit levels couple to both polarizations; decays return to either level
        s = 1 / math.sqrt(2)
        links = [("ea", "0", am, s), ("eb", "0", ap, s), ("ec", "1", am, s), ("ed", "1", ap, s)]
        excited = ("ea", "eb", "ec", "ed")
        decays = [(q, e, R / 2) for e in excited for q in ("0", "1")]
    else:
        raise ValueError(f"unknown spectator coupling {coupling!r}")
    H = Operator.zeros(space)
    for e in excited:
        H = H + delta * at(e, e)
    for e, q, a, s in links:
        op = at(e, q) @ a
        H = H + params.g * s * (op + op.dag())
    J = [math.sqrt(G * r) * at(q, e) for q, e, r in decays]
    J += [math.sqrt(G * (1 - R)) * at("trap", e) for e in excited] if R < 1 else []
    return H, J


def absorption_error(params: ModuleParams, delta_over_g, coupling="isotropic", settle=None) -> AbsorptionResult:
    """Error on a light-shifted spectator qubit from one later emission attempt.

    An emitter in the same cavity is excited instantaneously and shifted at the
    cavity zero; the spectator sits at detuning delta_over_g * g throughout.
    The spectator's qubit channel is reconstructed from four input states and
    decomposed into Pauli and leakage probabilities.
    """
    settle = 20 / params.Gamma if settle is None else settle
    n = params.n_max + 1
    space = HilbertSpace((("atom", 7), ("spectator", 7), ("a_minus", n), ("a_plus", n)))
    delta = delta_over_g * params.g
    t_on = shift_time(params)

    def emitter_ops(shift):
        e_at = lambda a, b: embed(outer(LEVELS, a, b), space, "atom")
        am = embed(destroy(n), space, "a_minus")
        ap = embed(destroy(n), space, "a_plus")
        cpl = e_at("0e", "0") @ am + e_at("1e", "1") @ ap
        H = params.g * (cpl + cpl.dag())
        d = params.delta_doppler + shift
        if d:
            H = H + d * (e_at("0e", "0e") + e_at("1e", "1e"))
        G, R, G3 = params.Gamma, params.R_br, params.Gamma3
        J = [math.sqrt(G * (1 - R)) * e_at("trap", "0e"), math.sqrt(G * (1 - R)) * e_at("trap", "1e"),
             math.sqrt(G * R) * e_at("0", "0e"), math.sqrt(G * R) * e_at("1", "1e"),
             math.sqrt(params.kappa) * am, math.sqrt(params.kappa) * ap,
             math.sqrt(G3 / 2) * e_at("0g", "trap"), math.sqrt(G3 / 2) * e_at("1g", "trap")]
        return H, [c for c in J if np.any(c.entries)]

    Hs, Js = _spectator_ops(params, coupling, space, delta)
    H0e, Je = emitter_ops(0.0)
    H1e, _ = emitter_ops(delta)
    H0, H1, J = H0e + Hs, H1e + Hs, Je + Js

    e = (ket(LEVELS, "0e") + ket(LEVELS, "1e")) / math.sqrt(2)
    vac = np.zeros(n)
    vac[0] = 1.0
    inputs = {"0": [1, 0], "1": [0, 1], "+": [1, 1], "+i": [1, 1j]}
    kets = {}
    for name, c in inputs.items():
        c = np.asarray(c, dtype=complex) / np.linalg.norm(c)
        s = c[0] * ket(SPEC_LEVELS, "0") + c[1] * ket(SPEC_LEVELS, "1")
        kets[name] = np.kron(np.kron(np.kron(e, s), vac), vac)
    seeds = sorted({int(i) for v in kets.values() for i in np.nonzero(np.abs(v) > 0)[0]})
    sub = reachable_subspace(space, [H0, H1] + J, seeds)
    ix = np.asarray(sub.indices)
    L0 = liouvillian(H0.restrict(sub), [c.restrict(sub) for c in J])
    L1 = liouvillian(H1.restrict(sub), [c.restrict(sub) for c in J])
    P = expm(L1 * settle) @ expm(L0 * t_on)
    dsub = len(ix)
    q = [SPEC_LEVELS.index("0"), SPEC_LEVELS.index("1")]
    outs = {}
    for name, v in kets.items():
        vs = v[ix]
        r = (P @ np.outer(vs, vs.conj()).reshape(-1)).reshape(dsub, dsub)
        full = np.zeros((space.total_dim,) * 2, dtype=complex)
        full[np.ix_(ix, ix)] = r
        T = full.reshape(7, 7, n, n, 7, 7, n, n)
        rs = np.einsum("asxyatxy->st", T)
        outs[name] = rs[np.ix_(q, q)]
    return AbsorptionResult(float(delta_over_g), *pauli_leakage(outs))


def pauli_leakage(outs):
    """Pauli error and leakage probabilities of a qubit channel from four outputs.

    ``outs`` maps the inputs |0>, |1>, |+>, |+i> to the output qubit blocks.
    """
    sx = np.array([[0, 1], [1, 0]])
    sy = np.array([[0, -1j], [1j, 0]])
    sz = np.diag([1.0, -1.0])
    eye = np.eye(2)
    E_I = outs["0"] + outs["1"]
    E_Z = outs["0"] - outs["1"]
    E_X = 2 * outs["+"] - E_I
    E_Y = 2 * outs["+i"] - E_I
    R = np.array([[0.5 * np.trace(a @ b).real for b in (E_I, E_X, E_Y, E_Z)] for a in (eye, sx, sy, sz)])
    p_l = 1 - R[0, 0]
    p_x = (R[0, 0] + R[1, 1] - R[2, 2] - R[3, 3]) / 4
    p_y = (R[0, 0] - R[1, 1] + R[2, 2] - R[3, 3]) / 4
    p_z = (R[0, 0] - R[1, 1] - R[2, 2] + R[3, 3]) / 4
    return float(p_x), float(p_y), float(p_z), float(p_l)


def fit_power_law(x, y, exponent=None):
    """Least-squares fit of y = a * x**p in log space; fixed exponent if given."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    if exponent is None:
        p, la = np.polyfit(lx, ly, 1)
        return float(np.exp(la)), float(p)
    return float(np.exp(np.mean(ly - exponent * lx))), float(exponent)
