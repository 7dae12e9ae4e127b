"""Acceptance suite shared by ``cavnet verify`` and the test-suite.

Each criterion returns a list of checks (name, measured, target, passed).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import constants as K
from .cavity import bowtie_geometry, coupling_budget, thermal_dg, twist_splitting
from .config import ScenarioConfig, load_config
from .qdyn import DensityMatrix, EvolutionSpec, HilbertSpace, Operator, evolve, liouvillian
from .spinphoton import (
    ModuleParams,
    absorption_error,
    emission_run,
    emitted_probability,
    eta_vs_kappa,
    fit_power_law,
    residual_photon_error,
    shift_time,
    with_shift,
)


@dataclass(frozen=True)
class Check:
    name: str
    measured: float
    target: str
    passed: bool


@dataclass
class CriterionResult:
    number: int
    title: str
    checks: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number:>2} [{verdict}] {self.title} ({self.seconds:.1f} s)"

    def detail(self) -> str:
        return "\n".join(f"    {'ok ' if c.passed else 'BAD'} {c.name}: {c.measured:.6g}  target {c.target}"
                         for c in self.checks)


def _within(x, target, rel):
    return abs(x - target) <= rel * abs(target)


def _check_rel(name, x, target, rel):
    return Check(name, float(x), f"{target:g} +/- {rel * 100:g}%", _within(x, target, rel))


def _check_abs(name, x, target, tol):
    return Check(name, float(x), f"{target:g} +/- {tol:g}", abs(x - target) <= tol)


# trace errors of every master-equation run made by the suite
_TRACE = []


def _record(run):
    _TRACE.append(run.trace_error)
    return run


def c1_emission(cfg: ScenarioConfig):
    p = cfg.module_params()
    kg = K.TWO_PI * np.geomspace(0.1e6, 10e6, cfg["numerics"]["kappa_points"])
    scan = eta_vs_kappa(p, kg)
    run = _record(emission_run(p, 8 / p.Gamma))
    return [
        _check_abs("eta at kappa/2pi = 1.04 MHz", run.eta_exact, 0.50, 0.02),
        _check_rel("argmax kappa/2pi (Hz)", scan.kappa_opt / K.TWO_PI, 1.04e6, 0.10),
    ]


def c2_cooperativity(cfg):
    p = cfg.module_params()
    C = p.cooperativity
    return [_check_abs("C", C, 2.49, 0.02), _check_abs("eta0", C / (1 + C), 0.713, 0.005)]


def c3_light_shift(cfg):
    p = cfg.module_params()
    window = 8 / p.Gamma
    a = _record(emission_run(p, window))
    shifted = with_shift(p, 100.0)
    b = _record(emission_run(shifted, window))
    drop = 1 - b.eta_exact / a.eta_exact
    t_on = shift_time(p)
    tail_a = emitted_probability(p, window, t_from=t_on)
    tail_b = emitted_probability(shifted, window, t_from=t_on)
    return [
        _check_abs("relative eta drop", drop, 0.01, 0.005),
        Check("tail suppression factor", tail_a / tail_b, ">= 10", tail_a / tail_b >= 10),
    ]


def c4_rate(cfg):
    from .sequence import bell_rate

    r = {m: bell_rate(cfg.sequence_params(m)).rate for m in range(1, 21)}
    plateau = [r[m] for m in range(5, 21)]
    flat = (max(plateau) - min(plateau)) / min(plateau)
    return [
        _check_rel("R_bp(m=1)", r[1], 7.8e4, 0.02),
        _check_rel("R_bp(m=5)", r[5], 1.0e5, 0.03),
        Check("plateau spread m=5..20", flat, "< 0.03", flat < 0.03),
    ]


def c5_layout(cfg):
    from .sequence import mean_t_ent, site_layout

    p = cfg.module_params()
    s = cfg["sequence"]
    lay = site_layout(cfg.mode_properties(), s["spacing_m"], s["threshold"], p.g)
    return [
        _check_abs("N sites", lay.n_sites, 204, 6),
        _check_rel("mean t_ent (s)", mean_t_ent(lay, p.kappa, p.Gamma), 1.09e-6, 0.03),
    ]


def c6_error_laws(cfg, threads=None):
    from .figures import absorption_coefficient
    from .heralding import darkcount_error, error_scan

    p = cfg.module_params()
    n = cfg["numerics"]
    pts = n["scan_points"]
    grid = n["grid_points"]
    g_scan = error_scan("unequal_g", np.geomspace(0.005, 0.1, pts), p, n=grid)
    d_scan = error_scan("doppler", np.linspace(2.0, 20.0, pts), p, n=grid)
    r_scan = error_scan("reexcitation", np.geomspace(10.0, 40.0, pts), p, n=grid)
    t_win = shift_time(p)
    eta = emitted_probability(p, t_win)
    eps_dc = darkcount_error(10.0, t_win, eta)
    eps_r = residual_photon_error(p, 100.0, 3e-3).eps_r
    _, _, coef_a = absorption_coefficient(cfg, threads=threads)
    return [
        _check_rel("eps_g coefficient", g_scan.coefficient, 0.394, 0.10),
        _check_rel("eps_T slope (1/uK)", d_scan.coefficient, 7.3e-6, 0.20),
        _check_rel("eps_d coefficient (1/ns^2)", r_scan.coefficient, 6.8e-8, 0.25),
        _check_rel("eps_dc at R_dc = 10/s", eps_dc, 8e-5, 0.02),
        Check("eps_r at D/g=100, dg/g=3e-3", eps_r, "< 1e-5", eps_r < 1e-5),
        _check_rel("eps_a1 coefficient", coef_a, 3.5, 0.15),
    ]


def c7_sequence(cfg, threads=None):
    from .sequence import nr_distribution

    seq = cfg.sequence_params(5)
    a = nr_distribution(seq).mean
    mc = nr_distribution(seq, "monte_carlo", seed=cfg["numerics"]["seed"], samples=cfg["numerics"]["mc_samples"],
                         threads=threads).mean
    return [_check_rel("mean N_r (m=5)", a, 250, 0.10), _check_rel("Monte Carlo / analytic", mc / a, 1.0, 0.01)]


def c8_soft_info(cfg):
    from .figures import darkcount_type_maps
    from .heralding import map_distribution, reexcitation_sets, unequal_g_sets

    p = cfg.module_params()
    n = cfg["numerics"]["grid_points"]
    d = map_distribution(unequal_g_sets(p, 0.031, n=n))
    rex = map_distribution(reexcitation_sets(p, cfg["errors"]["t_pi_s"], n=n))
    lo, hi = rex.quantile(0.05), rex.quantile(0.95)
    spread = (hi - lo) / rex.mean
    res, _ = darkcount_type_maps(cfg, n)
    tot = sum(res[0][0])
    i, j = np.unravel_index(int(np.argmax(tot)), tot.shape)
    edge = i in (0, n - 1) or j in (0, n - 1)
    return [
        _check_rel("eps_g CDF mean", d.mean, 4e-4, 0.20),
        Check("eps_g CDF median", d.median, "<= 1.2e-4", d.median <= 1.2e-4),
        Check("eps_d CDF 5-95% spread / mean", spread, "< 0.2 (step)", spread < 0.2),
        Check("dark-count map argmax on window edge", float(edge), "1", edge),
    ]


def c9_cavity(cfg):
    ph, c = cfg["physics"], cfg["cavity"]
    cb = coupling_budget(ph["waist_m"], ph["round_trip_m"], ph["wavelength_m"], K.TWO_PI * ph["gamma_over_2pi_hz"],
                         ph["r_br"], K.TWO_PI * ph["kappa_over_2pi_hz"])
    props = twist_splitting(bowtie_geometry(c["opening_deg"], c["twist_deg"], ph["round_trip_m"]),
                            ph["waist_m"], ph["wavelength_m"])
    th = thermal_dg(10e-6, cfg.trap_frequencies(), props=props)
    return [
        _check_rel("g_max/2pi (Hz)", cb.g / K.TWO_PI, 520e3, 0.01),
        _check_rel("FSR (Hz)", props.fsr, K.C_LIGHT / 0.0696, 1e-12),
        _check_rel("FSR rounded (Hz)", props.fsr, 4.31e9, 0.005),
        _check_rel("finesse (half-linewidth)", cb.finesse_half, 2070, 0.01),
        _check_rel("twist splitting (Hz)", props.splitting, 133e6, 0.10),
        _check_rel("k_c v_rms / 2pi (Hz)", th.kc_vrms / K.TWO_PI, 16e3, 0.05),
    ]


def _random_instance(rng, d=6, n_jumps=3):
    space = HilbertSpace((("q", d),))
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    H = Operator(space, (a + a.conj().T) / 2)
    J = [Operator(space, 0.5 * (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))) for _ in range(n_jumps)]
    v = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = v @ v.conj().T
    return space, H, J, DensityMatrix(space, rho / np.trace(rho).real)


def stepper_vs_oracle(seed=7, instances=5, d=6):
    """Largest deviation between the RK4 stepper and exp(L t) over random instances."""
    from scipy.linalg import expm

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        space, H, J, rho = _random_instance(rng, d)
        spec = EvolutionSpec([H], [], J, 0.0, 1.0, 0.1, tol=1e-13)
        traj = evolve(rho, spec)
        L = liouvillian(H, J)
        for k, t in enumerate(traj.times):
            ref = (expm(L * t) @ rho.entries.reshape(-1)).reshape(d, d)
            worst = max(worst, float(np.max(np.abs(traj.states[k] - ref))))
    return worst


def factorized_vs_joint(n=13):
    """Largest relative deviation between factorized and joint-space coincidence correlators."""
    from .heralding import BeamsplitterConfig, DetectionGrid, _ordered, joint_correlator, module_table

    p1 = ModuleParams(g=K.G_MAX * 1.03, delta_doppler=K.TWO_PI * 30e3)
    p2 = ModuleParams(g=K.G_MAX * 0.97)
    grid = DetectionGrid(shift_time(ModuleParams()), n - 1)
    ta, tb = module_table(p1, grid, method="expm"), module_table(p2, grid, method="expm")
    cfg = BeamsplitterConfig(0.6, 0.3)
    worst = 0.0
    for idx, M in enumerate(("I", "XX", "ZZ", "L")):
        fwd = _ordered(ta, tb, cfg.coefficients("d"), "+", cfg.coefficients("e"), "-")[..., idx]
        J = joint_correlator(p1, p2, cfg, ("d", "+"), ("e", "-"), grid.times, M)
        m = ~np.isnan(fwd)
        worst = max(worst, float(np.max(np.abs(fwd[m] - J[m])) / np.max(np.abs(J[m]))))
    return worst


def c10_oracles(cfg):
    step = stepper_vs_oracle()
    fact = factorized_vs_joint()
    p = cfg.module_params()
    for prm in (p, with_shift(p, 100.0), with_shift(p, cfg["errors"]["shift_over_g"])):
        _record(emission_run(prm, 8 / p.Gamma))
    tr = max(_TRACE)
    return [
        Check("factorized vs joint (relative)", fact, "< 1e-8", fact < 1e-8),
        Check("RK4 vs Liouvillian exponential", step, "< 1e-11", step < 1e-11),
        Check("max trace error over production runs", tr, "< 1e-9", tr < 1e-9),
    ]


def c11_budget(cfg, threads=None):
    from .figures import operating_point

    op = operating_point(cfg, threads)
    b = op.budget
    top = b.largest(2)
    ok = set(top) == {"eps_a", "eps_g"}
    return [
        Check("total error", b.total, "in [5e-4, 2e-3]", 5e-4 <= b.total <= 2e-3),
        Check(f"two largest rows are eps_a, eps_g (got {', '.join(top)})", float(ok), "1", ok),
    ]


CRITERIA = [
    (1, "emission optimum", c1_emission),
    (2, "cooperativity bookkeeping", c2_cooperativity),
    (3, "light-shift truncation", c3_light_shift),
    (4, "rate model", c4_rate),
    (5, "array layout", c5_layout),
    (6, "error-law fits", c6_error_laws),
    (7, "sequence statistics", c7_sequence),
    (8, "soft information", c8_soft_info),
    (9, "cavity design", c9_cavity),
    (10, "oracle equivalence", c10_oracles),
    (11, "budget aggregate", c11_budget),
]


def run_criterion(number: int, cfg: ScenarioConfig | None = None, threads=None) -> CriterionResult:
    cfg = load_config() if cfg is None else cfg
    _, title, fn = CRITERIA[number - 1]
    t0 = time.perf_counter()
    kw = {"threads": threads} if "threads" in fn.__code__.co_varnames else {}
    checks = fn(cfg, **kw)
    return CriterionResult(number, title, checks, time.perf_counter() - t0)


def run_all(cfg: ScenarioConfig | None = None, threads=None, numbers=None):
    numbers = [n for n, _, _ in CRITERIA] if numbers is None else numbers
    return [run_criterion(n, cfg, threads) for n in numbers]
