"""Analytic error estimates for the excitation and reset steps, and the
aggregated fidelity budget."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from . import constants as K

G_P = 1.0  # Lande factor, 3P1 F=3/2
G_D = 1.0 / 3.0  # Lande factor, 3D1 F=3/2


@dataclass(frozen=True)
class ExcitationParams:
    """Two-photon drive 1S0 -> 3P1 -> 3D1. Entries are (sigma+, sigma-) pairs in rad/s."""

    Omega1: tuple = (K.TWO_PI * 225e6, K.TWO_PI * 225e6)
    Omega2: tuple = (K.TWO_PI * 225e6, K.TWO_PI * 225e6)
    Delta: tuple = (K.TWO_PI * 1e9, K.TWO_PI * 1e9)
    B: float = 0.01  # tesla
    g_P: float = G_P
    g_D: float = G_D
    mu_B: float = K.MU_B

    def __post_init__(self):
        if any(d == 0 for d in self.Delta):
            raise ZeroDivisionError("intermediate-state detuning must be nonzero")

    @property
    def zeeman(self) -> float:
        """mu_B B / hbar in rad/s."""
        return self.mu_B * self.B / K.HBAR

    def scaled(self, s):
        """Same drive with both Rabi frequencies multiplied by s."""
        from dataclasses import replace

        return replace(self, Omega1=tuple(o * s for o in self.Omega1), Omega2=tuple(o * s for o in self.Omega2))


@dataclass(frozen=True)
class RabiPair:
    resonant: tuple  # Omega~ (+, -)
    off: tuple  # generalized off-resonant Omega~' (+, -)
    coupling: tuple  # off-resonant coupling term (+, -)
    detuning: float  # g_D mu_B B / hbar


def two_photon_rabi(p: ExcitationParams) -> RabiPair:
    mu = p.zeeman
    res, off, cpl = [], [], []
    for idx, sgn in ((0, 1), (1, -1)):
        prod = p.Omega1[idx] * p.Omega2[idx]
        res.append(prod / (2 * p.Delta[idx]))
        d = p.Delta[idx] + sgn * p.g_P * mu
        if d == 0:
            raise ZeroDivisionError("Zeeman-shifted detuning vanishes")
        c = prod / (3 * math.sqrt(3) * 2 * d)
        cpl.append(c)
        off.append(math.hypot(p.g_D * mu, c))
    return RabiPair(tuple(res), tuple(off), tuple(cpl), p.g_D * mu)


def offresonant_population(coupling, generalized, t):
    """Detuned two-level transfer (coupling/generalized)^2 sin^2(generalized t / 2)."""
    return (coupling / generalized) ** 2 * math.sin(generalized * t / 2) ** 2


@dataclass(frozen=True)
class PulseChoice:
    t_pi: float
    l: int
    residual: float
    scale: float  # applied to both Rabi frequencies
    Omega: float  # resulting sigma+ single-photon Rabi frequency (rad/s)
    candidates: list = field(default_factory=list)


def _residual(p: ExcitationParams, t):
    r = two_photon_rabi(p)
    return 0.5 * sum(offresonant_population(c, o, t) for c, o in zip(r.coupling, r.off))


def t_pi_search(p: ExcitationParams, l_max=4) -> PulseChoice:
    """Shortest pi time that is commensurate with the off-resonant Rabi cycle.

    For each l, the common drive scale is solved so pi/Omega~ equals
    l * 2 pi / Omega~' with Omega~' averaged over both signs. The shortest
    solution is returned; its residual uses the true per-sign frequencies.
    """
    if l_max < 1:
        raise ValueError("l_max must be >= 1")
    cands = []
    for l in range(1, l_max + 1):
        def f(ls):
            q = p.scaled(math.exp(ls))
            r = two_photon_rabi(q)
            return (math.pi / np.mean(r.resonant)) - l * K.TWO_PI / np.mean(r.off)
        grid = np.linspace(-8, 8, 161)
        vals = [f(v) for v in grid]
        roots = [brentq(f, a, b, xtol=1e-14) for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:])
                 if fa * fb < 0]
        for ls in roots:
            q = p.scaled(math.exp(ls))
            t = math.pi / float(np.mean(two_photon_rabi(q).resonant))
            cands.append(PulseChoice(t, l, _residual(q, t), math.exp(ls), q.Omega1[0]))
    if not cands:
        raise ValueError("no commensurate pulse found")
    best = min(cands, key=lambda c: c.t_pi)
    return PulseChoice(best.t_pi, best.l, best.residual, best.scale, best.Omega, cands)


# ----------------------------------------------------------- analytic terms

@dataclass(frozen=True)
class Term:
    value: float
    formula: str


@dataclass(frozen=True)
class AnalyticInputs:
    Gamma: float = K.GAMMA
    Gamma3: float = K.GAMMA3
    g: float = K.G_MAX
    Delta_exc: float = K.TWO_PI * 1e9
    t_pi: float = 20e-9
    Omega_tilde: float = K.TWO_PI * 25.3e6
    shift_over_g: float = 2000.0
    t_ent: float = K.T_ENT_MEAN
    t_emit: float = 1.0e-6  # time spent in 3D1 per attempt
    tau_3p0: float = K.TAU_3P0
    R_dc: float = K.R_DARK
    t_window: float = 1.0075e-6
    eta: float = 0.5
    B: float = 0.01
    B_stability: float = 1e-6  # fractional

    @property
    def Delta_ls(self):
        return self.shift_over_g * self.g


def analytic_terms(a: AnalyticInputs = AnalyticInputs()) -> dict:
    """Named closed-form estimates; each carries its formula."""
    phase = G_D * K.MU_B * a.B * a.B_stability / K.HBAR * a.t_emit
    return {
        "intermediate_scattering": Term(a.Gamma3 / a.Delta_exc, "Gamma3/Delta"),
        "shifted_site_scattering": Term(a.t_pi * a.Gamma * (a.Omega_tilde / a.Delta_ls) ** 2,
                                        "t_pi*Gamma*(Omega~/Delta_ls)^2"),
        "raman_emission": Term((a.g / a.Delta_exc) ** 2, "(g/Delta)^2"),
        "metastable_decay_per_attempt": Term(2 * a.t_ent / a.tau_3p0, "2*t_ent/tau"),
        "depump_suppression": Term((a.Gamma / a.Delta_ls) ** 2, "(Gamma/Delta_ls)^2"),
        "dark_count": Term(dark_count_error(a.R_dc, a.t_window, a.eta), "4*t_ent*R_dc/eta"),
        "magnetic_phase": Term(phase**2 / 4, "sin^2(phi/2), phi = g_D*mu_B*dB*t/hbar"),
    }


def dark_count_error(R_dc, t_ent, eta):
    return 4 * t_ent * R_dc / eta


def light_shift_power(lifetime, branching, detuning, target_shift, wavelength=525e-9, waist=None) -> float:
    """Optical power (W) for a two-level shift target = Omega^2/(4 detuning).

    Omega^2 = 3 lambda^3 Gamma_p I / (2 pi h c) with Gamma_p = branching/lifetime
    the partial decay rate of the coupling transition; peak intensity of a
    Gaussian beam I = 2P/(pi w^2). waist defaults to the wavelength.
    The default wavelength is an estimate for the 3D1 -> 6s8p 3P1 line.
    """
    for name, v in (("lifetime", lifetime), ("branching", branching), ("detuning", detuning),
                    ("target_shift", target_shift), ("wavelength", wavelength)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    waist = wavelength if waist is None else waist
    gp = branching / lifetime
    omega2 = 4 * detuning * target_shift
    intensity = omega2 * K.TWO_PI * K.HBAR * K.TWO_PI * K.C_LIGHT / (3 * wavelength**3 * gp)
    return float(intensity * math.pi * waist**2 / 2)


@dataclass(frozen=True)
class DepumpResult:
    time: float  # inf if never reached
    p2_fraction: float
    times: np.ndarray
    populations: np.ndarray  # (5, n): 3P0, 3D1, 3P1, 1S0, 3P2


def depump_estimate(Gamma=K.GAMMA, Gamma3=K.GAMMA3, branch_3P1=0.34, branch_3P2=0.01, drive=None,
                    target=1e-3, t_max=200e-6) -> DepumpResult:
    """Rate-equation cascade 3P0 <-> 3D1 -> {3P1 -> 1S0, 3P2, 3P0}.

    drive is the stimulated rate between 3P0 and 3D1 (1/s); None means
    saturated (100 Gamma). Returns the first time the 3P0 population falls
    below target and the final fraction parked in 3P2.
    """
    W = 100 * Gamma if drive is None else drive
    b0 = 1 - branch_3P1 - branch_3P2

    def rhs(t, y):
        p0, d, p1, s, p2 = y
        return [-W * (p0 - d) + b0 * Gamma * d, W * (p0 - d) - Gamma * d,
                branch_3P1 * Gamma * d - Gamma3 * p1, Gamma3 * p1, branch_3P2 * Gamma * d]

    def crossed(t, y):
        return y[0] - target

    crossed.terminal = False
    crossed.direction = -1
    ts = np.linspace(0, t_max, 2001)
    sol = solve_ivp(rhs, (0, t_max), [1, 0, 0, 0, 0], t_eval=ts, events=crossed, rtol=1e-10, atol=1e-14,
                    method="LSODA")
    hits = sol.t_events[0]
    t_hit = float(hits[0]) if len(hits) else math.inf
    loss = branch_3P1 + branch_3P2
    p2 = branch_3P2 / loss if (W > 0 and loss > 0) else 0.0
    return DepumpResult(t_hit, p2, sol.t, sol.y)


# ------------------------------------------------------------------ budget

BUDGET_ROWS = (
    ("eps_g", "coupling mismatch"),
    ("eps_T", "Doppler distinguishability"),
    ("eps_d", "decay and re-excitation"),
    ("eps_dc", "detector dark counts"),
    ("eps_r", "residual photons"),
    ("eps_a", "spectator absorption"),
    ("eps_m", "metastable decay"),
)


@dataclass(frozen=True)
class BudgetRow:
    name: str
    label: str
    value: float
    note: str = ""


@dataclass(frozen=True)
class BudgetTable:
    rows: tuple
    notes: dict = field(default_factory=dict)  # analytic terms, reported but not summed

    @property
    def total(self) -> float:
        return float(sum(r.value for r in self.rows))

    @property
    def fidelity(self) -> float:
        return 1.0 - self.total

    def largest(self, k=2):
        return [r.name for r in sorted(self.rows, key=lambda r: -r.value)[:k]]

    def as_text(self) -> str:
        w = max(len(r.label) for r in self.rows)
        lines = [f"{r.name:<7} {r.label:<{w}}  {r.value:.3e}  {r.note}".rstrip() for r in self.rows]
        lines.append(f"{'total':<7} {'':<{w}}  {self.total:.3e}  fidelity {self.fidelity:.5f}")
        for k, t in self.notes.items():
            lines.append(f"  [{k}] {t.value:.2e}  ({t.formula})")
        return "\n".join(lines)


def budget_table(values: dict, notes: dict | None = None, provenance: dict | None = None) -> BudgetTable:
    """Assemble the budget from per-source errors; every row must be present."""
    missing = [n for n, _ in BUDGET_ROWS if n not in values]
    if missing:
        raise KeyError(f"missing budget component(s): {', '.join(missing)}")
    unknown = set(values) - {n for n, _ in BUDGET_ROWS}
    if unknown:
        raise KeyError(f"unknown budget component(s): {', '.join(sorted(unknown))}")
    prov = provenance or {}
    rows = tuple(BudgetRow(n, lab, float(values[n]), prov.get(n, "")) for n, lab in BUDGET_ROWS)
    return BudgetTable(rows, dict(notes or {}))


def crosstalk_detuning(T=K.TEMPERATURE, ratio=2.6, mass=K.MASS_YB171, wavelength=K.WAVELENGTH) -> float:
    """Static detuning error equal to `ratio` times the rms Doppler shift k_c v_rms."""
    return ratio * K.TWO_PI / wavelength * math.sqrt(K.K_B * T / mass)


def crosstalk_error(params=None, T=K.TEMPERATURE, ratio=2.6, n=60) -> float:
    """Entanglement error from a static modulator-crosstalk detuning, via the Doppler machinery."""
    from .heralding import doppler_sets, ensemble_error
    from .spinphoton import ModuleParams

    params = ModuleParams() if params is None else params
    return float(sum(ensemble_error(doppler_sets(params, T, n=n, static=crosstalk_detuning(T, ratio)))))
