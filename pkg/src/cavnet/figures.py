"""Figure-reproduction tables and the operating-point budget.

Each generator takes a ScenarioConfig and returns a FigureArtifact whose rows
are written as CSV by the command-line front end.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import constants as K
from .budget import AnalyticInputs, analytic_terms, budget_table, crosstalk_detuning
from .cavity import bowtie_geometry, contour_samples, coupling_budget, thermal_dg, twist_splitting
from .config import ScenarioConfig
from .heralding import (
    BeamsplitterConfig,
    CorrelatorSet,
    ErrorDistribution,
    darkcount_error,
    darkcount_maps,
    default_grid,
    doppler_sets,
    ensemble_distribution,
    ensemble_error,
    error_scan,
    herald_probability,
    map_distribution,
    reexcitation_sets,
    soft_info,
    total_error,
    trapezoid_weights,
    unequal_g_sets,
)
from .sequence import bell_rate, mean_t_ent, nr_distribution, sequence_error_inputs, site_layout
from .spinphoton import (
    absorption_error,
    emission_run,
    emitted_probability,
    eta_vs_kappa,
    fit_power_law,
    residual_photon_error,
    shift_time,
    with_shift,
)


class FigureError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FigureArtifact:
    figure_id: str
    columns: tuple
    rows: list
    metadata: dict = field(default_factory=dict)

    def column(self, name):
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])


def _pmap(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------- figure 2

def fig_2a(cfg: ScenarioConfig, threads=None):
    props = cfg.mode_properties()
    s = cfg["sequence"]
    lay = site_layout(props, s["spacing_m"], s["threshold"], cfg.module_params().g)
    rows = [("site", x, z, g / lay.g_max) for x, z, g in zip(lay.x, lay.z, lay.g)]
    for level in (s["threshold"], math.exp(-2) ** 0.5):
        zc, xc = contour_samples(props, level)
        rows += [(f"contour_{level:.4f}", x, z, level) for z, x in zip(zc, xc)]
    return ("kind", "x_m", "z_m", "g_over_gmax"), rows, {"n_sites": lay.n_sites}


def fig_2b(cfg, threads=None):
    p = cfg.module_params()
    window = 8 / p.Gamma
    a = emission_run(p, window)
    b = emission_run(with_shift(p, 100.0), window, n_grid=len(a.times) - 1)
    if len(a.times) != len(b.times) or not np.allclose(a.times, b.times, rtol=0, atol=1e-15):
        b_trace = np.interp(a.times, b.times, b.output_trace)
    else:
        b_trace = b.output_trace
    rows = list(zip(a.times, a.output_trace, b_trace))
    meta = {"eta_no_shift": a.eta_exact, "eta_shift": b.eta_exact, "delta_over_g": 100.0,
            "shift_time_s": shift_time(p)}
    return ("t_s", "output_rate_no_shift_per_s", "output_rate_shift_per_s"), rows, meta


def fig_2c(cfg, threads=None):
    p = cfg.module_params()
    n = cfg["numerics"]["kappa_points"]
    kg = K.TWO_PI * np.geomspace(0.1e6, 10e6, n)
    scan = eta_vs_kappa(p, kg)
    rows = list(zip(kg / K.TWO_PI, scan.eta, scan.cooperativity, scan.eta0))
    meta = {"kappa_opt_over_2pi_hz": scan.kappa_opt / K.TWO_PI, "eta_opt": scan.eta_opt, "C_opt": scan.C_opt}
    return ("kappa_over_2pi_hz", "eta", "cooperativity", "eta0"), rows, meta


def fig_2d(cfg, threads=None):
    rows = []
    for m in range(1, 21):
        r = bell_rate(cfg.sequence_params(m))
        rows.append((m, r.rate, r.entangled_fraction))
    return ("rounds", "rate_per_s", "entangled_fraction"), rows, {}


# ---------------------------------------------------------------- figure 3

def _scan_rows(res, x_name):
    cols = (x_name, "p_z", "p_x", "p_l", "total")
    rows = list(zip(res.x, res.p_z, res.p_x, res.p_l, res.total))
    return cols, rows, {"coefficient": res.coefficient, "exponent": res.exponent, "intercept": res.intercept}


def fig_3a(cfg, threads=None):
    n = cfg["numerics"]
    x = np.geomspace(0.005, 0.1, n["scan_points"])
    return _scan_rows(error_scan("unequal_g", x, cfg.module_params(), n=n["grid_points"]), "dg_over_g")


def fig_3b(cfg, threads=None):
    n = cfg["numerics"]
    x = np.linspace(2.0, 20.0, n["scan_points"])
    return _scan_rows(error_scan("doppler", x, cfg.module_params(), n=n["grid_points"]), "temperature_uk")


def fig_3c(cfg, threads=None):
    n = cfg["numerics"]
    x = np.geomspace(10.0, 40.0, n["scan_points"])
    return _scan_rows(error_scan("reexcitation", x, cfg.module_params(), n=n["grid_points"]), "t_pi_ns")


def fig_3d(cfg, threads=None):
    n = cfg["numerics"]
    x = np.geomspace(0.01, 100.0, n["scan_points"])
    return _scan_rows(error_scan("darkcount", x, cfg.module_params()), "dark_rate_per_s")


def fig_3e(cfg, threads=None):
    p = cfg.module_params()
    n = cfg["numerics"]["scan_points"]
    x = np.geomspace(10.0, 3000.0, n)
    dg = cfg["errors"]["dg_thermal"]
    exact = _pmap(lambda d: residual_photon_error(p, d).eps_r, x, threads)
    noisy = _pmap(lambda d: residual_photon_error(p, d, dg).eps_r, x, threads)
    return ("delta_over_g", "eps_r_exact_g", "eps_r_uncertain_g"), list(zip(x, exact, noisy)), {"dg_over_g": dg}


def absorption_coefficient(cfg, x=None, threads=None):
    p = cfg.module_params()
    x = np.geomspace(100.0, 3000.0, cfg["numerics"]["scan_points"]) if x is None else np.asarray(x)
    res = _pmap(lambda d: absorption_error(p, d), x, threads)
    tot = np.array([r.total for r in res])
    coef, _ = fit_power_law(x, tot, -2.0)
    return x, res, coef


def fig_3f(cfg, threads=None):
    x, res, coef = absorption_coefficient(cfg, threads=threads)
    nbar = {m: nr_distribution(cfg.sequence_params(m)).mean for m in (1, 5, 10)}
    rows = [(d, r.p_x, r.p_y, r.p_z, r.p_leak, r.total, *(nbar[m] * r.total for m in (1, 5, 10)))
            for d, r in zip(x, res)]
    cols = ("delta_over_g", "p_x", "p_y", "p_z", "p_leak", "eps_a1", "eps_a_m1", "eps_a_m5", "eps_a_m10")
    return cols, rows, {"coefficient": coef, **{f"nbar_r_m{m}": v for m, v in nbar.items()}}


# ---------------------------------------------------------------- figure 4

def _map_rows(times, maps, weight):
    rows = []
    for i, t1 in enumerate(times):
        for j, t2 in enumerate(times):
            rows.append((t1, t2, *(m[i, j] for m in maps), weight[i, j]))
    return rows


def _ensemble_map(weighted_sets, branch_index=0):
    num = [0.0, 0.0, 0.0]
    den = 0.0
    for w, sets in weighted_sets:
        sm = soft_info(sets[branch_index])
        num = [a + w * sm.weight * b for a, b in zip(num, (sm.p_z, sm.p_x, sm.p_l))]
        den = den + w * sm.weight
    with np.errstate(invalid="ignore", divide="ignore"):
        return [np.where(den > 0, a / den, 0.0) for a in num], den, sets[branch_index].times


def fig_4a(cfg, threads=None):
    p = cfg.module_params()
    sets = unequal_g_sets(p, cfg["errors"]["dg_over_g"], n=cfg["numerics"]["grid_points"])
    sm = soft_info(sets[0])
    cols = ("t1_s", "t2_s", "p_z", "p_x", "p_l", "probability_density")
    return cols, _map_rows(sm.times, (sm.p_z, sm.p_x, sm.p_l), sm.weight), {"detectors": "".join(sets[0].detectors[0] + sets[0].detectors[1])}


def fig_4b(cfg, threads=None):
    p = cfg.module_params()
    ws = doppler_sets(p, cfg["physics"]["temperature_k"], n=cfg["numerics"]["grid_points"])
    maps, den, times = _ensemble_map(ws)
    cols = ("t1_s", "t2_s", "p_z", "p_x", "p_l", "probability_density")
    return cols, _map_rows(times, maps, den), {}


def darkcount_type_maps(cfg, n=None):
    p = cfg.module_params()
    n = cfg["numerics"]["grid_points"] if n is None else n
    grid = default_grid(p, n)
    R = cfg["physics"]["dark_rate_per_s"]
    dc = darkcount_maps(p, R, grid)
    clean = darkcount_maps(p, 0.0, grid)
    res = []
    for new, old in zip(dc.sets, clean.sets):
        a, b = soft_info(new), soft_info(old)
        res.append(((a.p_z - b.p_z, a.p_x - b.p_x, a.p_l - b.p_l), a.weight, new.times))
    return res, dc


def fig_4c(cfg, threads=None):
    res, dc = darkcount_type_maps(cfg)
    maps, w, times = res[0]
    cols = ("t1_s", "t2_s", "p_z", "p_x", "p_l", "probability_density")
    return cols, _map_rows(times, maps, w), {"false_probability": dc.false_probability,
                                              "true_probability": dc.true_probability}


def error_distributions(cfg, kind, threads=None):
    """CDFs of one error type ('z', 'x' or 'l') for every source at the operating point."""
    key = {"z": "p_z", "x": "p_x", "l": "p_l"}[kind]
    p = cfg.module_params()
    n = cfg["numerics"]["grid_points"]
    e = cfg["errors"]
    out = {}
    out["eps_g"] = map_distribution(unequal_g_sets(p, e["dg_over_g"], n=n), key)
    out["eps_T"] = ensemble_distribution(doppler_sets(p, cfg["physics"]["temperature_k"], n=n), key)
    rex = total_error(reexcitation_sets(p, e["t_pi_s"], n=n))
    out["eps_d"] = ErrorDistribution.step(rex["zxl".index(kind)])
    res, _ = darkcount_type_maps(cfg, n)
    vals = np.concatenate([r[0]["zxl".index(kind)].ravel() for r in res])
    wts = np.concatenate([np.outer(trapezoid_weights(r[2]), trapezoid_weights(r[2])).ravel() * r[1].ravel()
                          for r in res])
    out["eps_dc"] = ErrorDistribution.from_samples(vals, wts)
    ab = absorption_error(p, e["shift_over_g"])
    frac = {"z": ab.p_z + ab.p_y, "x": ab.p_x + ab.p_y, "l": ab.p_leak}[kind]
    for m in (1, 5, 10):
        seq = cfg.sequence_params(m)
        se = sequence_error_inputs(seq, frac, cfg["physics"]["tau_3p0_s"])
        out[f"eps_a_m{m}"] = se.eps_a
        if kind == "l":
            out[f"eps_m_m{m}"] = se.eps_m
    return out


def _cdf_figure(kind):
    def fig(cfg, threads=None):
        dists = error_distributions(cfg, kind, threads)
        rows = []
        meta = {}
        for name, d in dists.items():
            v, c = _thin(d.values, d.cdf)
            rows += [(name, a, b) for a, b in zip(v, c)]
            meta[f"mean_{name}"] = d.mean
        return ("source", "error", "cdf"), rows, meta
    return fig


def _thin(values, cdf, n=400):
    """Keep at most n points of a CDF, always including the ends."""
    if len(values) <= n:
        return values, cdf
    idx = np.unique(np.searchsorted(cdf, np.linspace(0, 1, n), side="left").clip(0, len(cdf) - 1))
    idx = np.union1d(idx, [0, len(cdf) - 1])
    return values[idx], cdf[idx]


FIGURES = {
    "2a": fig_2a, "2b": fig_2b, "2c": fig_2c, "2d": fig_2d,
    "3a": fig_3a, "3b": fig_3b, "3c": fig_3c, "3d": fig_3d, "3e": fig_3e, "3f": fig_3f,
    "4a": fig_4a, "4b": fig_4b, "4c": fig_4c,
    "4d": _cdf_figure("z"), "4e": _cdf_figure("x"), "4f": _cdf_figure("l"),
}


def make_figure(figure_id: str, cfg: ScenarioConfig, threads=None) -> FigureArtifact:
    if figure_id not in FIGURES:
        raise FigureError(f"unknown figure id {figure_id!r}; choose from {', '.join(FIGURES)}")
    cols, rows, meta = FIGURES[figure_id](cfg, threads)
    md = {"figure": figure_id, "config_hash": cfg.hash, "seed": cfg["numerics"]["seed"],
          "code_version": __version__}
    md.update(meta)
    return FigureArtifact(figure_id, tuple(cols), list(rows), md)


# ----------------------------------------------------------------- budget

@dataclass(frozen=True, eq=False)
class OperatingPoint:
    budget: object
    cavity: dict
    sequence: dict
    extras: dict


def operating_point(cfg: ScenarioConfig, threads=None, absorption_coef=None) -> OperatingPoint:
    """Every budget row from its source operation at the configured operating point."""
    p = cfg.module_params()
    ph, e, nm = cfg["physics"], cfg["errors"], cfg["numerics"]
    n = nm["grid_points"]
    t_win = shift_time(p)
    eta_win = emitted_probability(p, t_win)
    eps_g = sum(total_error(unequal_g_sets(p, e["dg_over_g"], n=n)))
    eps_T = sum(ensemble_error(doppler_sets(p, ph["temperature_k"], n=n)))
    eps_d = sum(total_error(reexcitation_sets(p, e["t_pi_s"], n=n)))
    eps_dc = darkcount_error(ph["dark_rate_per_s"], t_win, eta_win)
    eps_r = residual_photon_error(p, e["shift_over_g"], e["dg_thermal"]).eps_r
    eps_a1 = absorption_error(p, e["shift_over_g"]).total
    seq = cfg.sequence_params()
    nr = nr_distribution(seq)
    se = sequence_error_inputs(seq, eps_a1, ph["tau_3p0_s"], nr)
    values = {"eps_g": eps_g, "eps_T": eps_T, "eps_d": eps_d, "eps_dc": eps_dc, "eps_r": eps_r,
              "eps_a": se.eps_a.mean, "eps_m": se.eps_m.mean}
    prov = {
        "eps_g": f"unequal g, dg/g={e['dg_over_g']}",
        "eps_T": f"Doppler ensemble, T={ph['temperature_k'] * 1e6:g} uK",
        "eps_d": f"square pulse t_pi={e['t_pi_s'] * 1e9:g} ns",
        "eps_dc": f"4 t R/eta, R={ph['dark_rate_per_s']:g}/s",
        "eps_r": f"D/g={e['shift_over_g']:g}, dg/g={e['dg_thermal']:g}",
        "eps_a": f"N_r={nr.mean:.1f} x eps_a1={eps_a1:.3g}",
        "eps_m": f"tau={ph['tau_3p0_s']:g} s",
    }
    ai = AnalyticInputs(Gamma=p.Gamma, Gamma3=p.Gamma3, g=p.g, t_pi=e["t_pi_s"], shift_over_g=e["shift_over_g"],
                        t_ent=seq.t_ent, tau_3p0=ph["tau_3p0_s"], R_dc=ph["dark_rate_per_s"], t_window=t_win,
                        eta=eta_win, B=ph["b_field_t"])
    notes = analytic_terms(ai)
    table = budget_table(values, notes, prov)
    cb = coupling_budget(ph["waist_m"], ph["round_trip_m"], ph["wavelength_m"], p.Gamma, p.R_br, p.kappa)
    c = cfg["cavity"]
    props = twist_splitting(bowtie_geometry(c["opening_deg"], c["twist_deg"], ph["round_trip_m"]),
                            ph["waist_m"], ph["wavelength_m"])
    th = thermal_dg(ph["temperature_k"], cfg.trap_frequencies(), props=props)
    lay = site_layout(props, cfg["sequence"]["spacing_m"], cfg["sequence"]["threshold"], p.g)
    cavity = {"g_geometry_over_2pi_hz": cb.g / K.TWO_PI, "cooperativity": p.cooperativity,
              "eta0": p.cooperativity / (1 + p.cooperativity), "finesse_energy": cb.finesse_energy,
              "finesse_half": cb.finesse_half, "fsr_hz": props.fsr, "splitting_hz": props.splitting,
              "thermal_dg_over_g": th.dg_over_g, "kc_vrms_over_2pi_hz": th.kc_vrms / K.TWO_PI}
    rate = bell_rate(seq)
    sequence = {"n_sites": lay.n_sites, "t_ent_mean_layout_s": mean_t_ent(lay, p.kappa, p.Gamma),
                "rate_per_s": rate.rate, "entangled_fraction": rate.entangled_fraction, "nbar_r": nr.mean}
    extras = {"eta_window": eta_win, "t_window_s": t_win, "eps_a1": eps_a1,
              "crosstalk_detuning_over_2pi_hz": crosstalk_detuning(ph["temperature_k"], e["crosstalk_ratio"]) / K.TWO_PI}
    return OperatingPoint(table, cavity, sequence, extras)
