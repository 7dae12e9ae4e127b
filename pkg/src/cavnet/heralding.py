"""Two-module heralding: beamsplitter, coincidence correlators, conditional errors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt

from . import constants as K
from .qdyn import DensityMatrix, EvolutionSpec, HilbertSpace, Operator, evolve, regression_table, two_time_correlator
from .spinphoton import (
    ModuleModel,
    ModuleParams,
    Pulse,
    fit_power_law,
    gauss_hermite_normal,
    pick_method,
    shift_time,
)

POLS = ("-", "+")
M_NAMES = ("I", "XX", "ZZ", "L")
# seed and observable slots: (left op is a, right op is a^dag)
_LR = {(True, True): 0, (True, False): 1, (False, True): 2, (False, False): 3}
_BB_DAG = np.array([0, 2, 1, 3])


@dataclass(frozen=True)
class BeamsplitterConfig:
    xi: float = math.pi / 4
    phi: float = 0.0

    @property
    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.xi), math.sin(self.xi)
        return np.array([[c, -np.exp(-1j * self.phi) * s], [np.exp(1j * self.phi) * s, c]])

    def coefficients(self, detector: str) -> np.ndarray:
        """Row of the transfer matrix: detector mode in terms of (b, c)."""
        return self.matrix[{"d": 0, "e": 1}[detector]]


def beamsplitter_transform(cfg: BeamsplitterConfig, b, c):
    """Output amplitudes (d, e) for input amplitudes (b, c) of one polarization."""
    out = cfg.matrix @ np.array([b, c], dtype=complex)
    return out[0], out[1]


@dataclass(frozen=True)
class DetectionGrid:
    window: float
    n: int = 60

    @property
    def h(self):
        return self.window / self.n

    @property
    def times(self):
        return np.linspace(0.0, self.window, self.n + 1)


BRANCHES = {
    "psi-": ((("d", "+"), ("e", "-")), (("e", "+"), ("d", "-"))),
    "psi+": ((("d", "+"), ("d", "-")), (("e", "+"), ("e", "-"))),
}


@dataclass(frozen=True, eq=False)
class ModuleTable:
    """Single-module regression data on a time grid.

    ``G[i, j, s, lr, p, m, bb]``: t1 index i, t2 index j >= i, first-photon
    polarization s, seed slot lr (a.a^dag, a., .a^dag, identity), second
    polarization p, qubit operator m (I, X, Z, Pi) and observable slot bb
    (a^dag M a, a^dag M, M a, M). Output operators carry sqrt(kappa).
    """

    times: np.ndarray
    G: np.ndarray
    params: ModuleParams
    substeps: int
    trace_error: float


def module_table(params: ModuleParams, grid: DetectionGrid, method="auto", tol=1e-9) -> ModuleTable:
    model = ModuleModel(params)
    spec = model.spec(grid.window, grid.h, tol=tol)
    m = pick_method(spec) if method == "auto" else method
    traj = evolve(model.rho0, spec, method=m)
    a = {p: model.a[p].entries for p in POLS}
    ad = {p: a[p].conj().T for p in POLS}
    qops = [np.eye(model.dim), model.X.entries, model.Z.entries, model.Pi.entries]
    obs = []
    for p in POLS:
        for M in qops:
            obs += [ad[p] @ M @ a[p], ad[p] @ M, M @ a[p], M]
    obs = np.array(obs)

    def seeds(r):
        return np.array([a["-"] @ r @ ad["-"], a["-"] @ r, a["+"] @ r @ ad["+"], a["+"] @ r])

    tab = regression_table(traj, spec, seeds, obs, method=m)  # (nt, nt, 4, 32)
    nt = len(traj.times)
    tab = tab.reshape(nt, nt, 2, 2, 2, 4, 4)  # i, j, s, seed(aa, a.), p, m, bb
    G = np.full((nt, nt, 2, 4, 2, 4, 4), np.nan + 0j)
    G[:, :, :, 0] = tab[:, :, :, 0]
    G[:, :, :, 1] = tab[:, :, :, 1]
    G[:, :, :, 2] = np.conj(tab[:, :, :, 1][..., _BB_DAG])
    one = np.einsum("oij,tji->to", obs, traj.states).reshape(nt, 2, 4, 4)
    iu = np.triu_indices(nt)
    G[iu[0], iu[1], :, 3] = one[iu[1]][:, None]
    # sqrt(kappa) per output operator
    na_lr = np.array([2, 1, 1, 0])
    na_bb = np.array([2, 1, 1, 0])
    scale = np.sqrt(params.kappa) ** (na_lr[:, None, None, None] + na_bb[None, None, None, :])
    G = G * scale[None, None, None]
    return ModuleTable(traj.times, G, params, traj.substeps, traj.trace_error())


def _ordered(t1: ModuleTable, t2: ModuleTable, alpha, s, beta, p):
    """Coincidence terms for a first click (alpha, s) then a second click (beta, p).

    Returns (nt, nt, 4) over (t_first, t_second, M) with NaN below the diagonal.
    """
    si, pi_ = POLS.index(s), POLS.index(p)
    A = t1.G[:, :, si, :, pi_]  # (i, j, lr, m, bb)
    B = t2.G[:, :, si, :, pi_]
    out = 0
    for j in (0, 1):
        for k in (0, 1):
            for l in (0, 1):
                for n in (0, 1):
                    c = alpha[j] * np.conj(alpha[k]) * np.conj(beta[l]) * beta[n]
                    if c == 0:
                        continue
                    lr1, lr2 = _LR[(j == 0, k == 0)], _LR[(j == 1, k == 1)]
                    bb1, bb2 = _LR[(l == 0, n == 0)], _LR[(l == 1, n == 1)]
                    out = out + c * A[:, :, lr1, :, bb1] * B[:, :, lr2, :, bb2]
    return out


@dataclass(frozen=True, eq=False)
class CorrelatorSet:
    times: np.ndarray
    P: np.ndarray
    XX: np.ndarray
    ZZ: np.ndarray
    L: np.ndarray
    branch: str
    detectors: tuple
    max_imag: float = 0.0

    @property
    def xx_sign(self):
        """Ideal XX/P for the heralded state."""
        return -1.0 if self.branch == "psi-" else 1.0

    def transpose(self):
        return CorrelatorSet(self.times, self.P.T, self.XX.T, self.ZZ.T, self.L.T, self.branch,
                             self.detectors[::-1], self.max_imag)


def pair_correlators(t1: ModuleTable, t2: ModuleTable, cfg: BeamsplitterConfig, det_a, det_b, branch) -> CorrelatorSet:
    """Correlators for clicks det_a at time t_a (rows) and det_b at t_b (columns), both orders."""
    al, be = cfg.coefficients(det_a[0]), cfg.coefficients(det_b[0])
    fwd = _ordered(t1, t2, al, det_a[1], be, det_b[1])
    rev = _ordered(t1, t2, be, det_b[1], al, det_a[1])
    nt = len(t1.times)
    full = np.where(np.triu(np.ones((nt, nt), bool))[..., None], fwd, np.swapaxes(rev, 0, 1))
    imag = float(np.nanmax(np.abs(full.imag)))
    r = full.real
    return CorrelatorSet(t1.times, r[..., 0], r[..., 1], r[..., 2], r[..., 3], branch, (det_a, det_b), imag)


def coincidence_correlators(mod1: ModuleParams, mod2: ModuleParams, cfg: BeamsplitterConfig | None = None,
                            grid: DetectionGrid | None = None, tables=None, method="auto") -> list:
    """All four detector-pair correlator sets (two per heralded Bell state)."""
    cfg = BeamsplitterConfig() if cfg is None else cfg
    if tables is None:
        grid = default_grid(mod1) if grid is None else grid
        ta = module_table(mod1, grid, method)
        tb = ta if mod2 == mod1 else module_table(mod2, grid, method)
    else:
        ta, tb = tables
    out = []
    for branch, pairs in BRANCHES.items():
        for det_a, det_b in pairs:
            out.append(pair_correlators(ta, tb, cfg, det_a, det_b, branch))
    return out


def default_grid(params: ModuleParams, n=60) -> DetectionGrid:
    return DetectionGrid(shift_time(params), n)


# ---------------------------------------------------------------- conditional errors

@dataclass(frozen=True, eq=False)
class SoftInfoMap:
    times: np.ndarray
    p_z: np.ndarray
    p_x: np.ndarray
    p_l: np.ndarray
    mask: np.ndarray  # True where P is below the floor
    weight: np.ndarray  # P on the grid

    @property
    def total(self):
        return self.p_z + self.p_x + self.p_l


def _fill_masked(a, mask):
    if not mask.any() or mask.all():
        return a
    _, (ii, jj) = distance_transform_edt(mask, return_indices=True)
    return a[ii, jj]


def soft_info(cs: CorrelatorSet, floor=1e-12) -> SoftInfoMap:
    P = cs.P
    mask = P < floor * np.max(P)
    with np.errstate(divide="ignore", invalid="ignore"):
        p_z = 0.5 * (1 - cs.xx_sign * cs.XX / cs.L)
        p_x = 0.5 * (1 + cs.ZZ / cs.L)
        p_l = 1 - cs.L / P
    maps = []
    for m in (p_z, p_x, p_l):
        m = np.where(mask, np.nan, m)
        maps.append(_fill_masked(m, mask))
    return SoftInfoMap(cs.times, *maps, mask, np.where(P > 0, P, 0.0))


def trapezoid_weights(times):
    h = np.diff(times)
    w = np.zeros(len(times))
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def herald_probability(cs: CorrelatorSet) -> float:
    w = trapezoid_weights(cs.times)
    return float(w @ cs.P @ w)


def total_error(cs, floor=1e-12):
    """Weighted (P_z, P_x, P_l) over one or several correlator sets."""
    sets = [cs] if isinstance(cs, CorrelatorSet) else list(cs)
    num = np.zeros(3)
    den = 0.0
    for c in sets:
        sm = soft_info(c, floor)
        w = np.outer(trapezoid_weights(c.times), trapezoid_weights(c.times)) * sm.weight
        num += [np.sum(w * sm.p_z), np.sum(w * sm.p_x), np.sum(w * sm.p_l)]
        den += np.sum(w)
    return tuple(float(v) for v in num / den)


@dataclass(frozen=True, eq=False)
class ErrorDistribution:
    values: np.ndarray
    cdf: np.ndarray
    mean: float

    def quantile(self, q):
        i = int(np.searchsorted(self.cdf, q, side="left"))
        return float(self.values[min(i, len(self.values) - 1)])

    @property
    def median(self):
        return self.quantile(0.5)

    @classmethod
    def from_samples(cls, values, weights):
        v = np.asarray(values, float).ravel()
        w = np.asarray(weights, float).ravel()
        keep = w > 0
        v, w = v[keep], w[keep]
        order = np.argsort(v, kind="stable")
        v, w = v[order], w[order]
        tot = w.sum()
        if tot <= 0:
            return cls(np.array([0.0]), np.array([1.0]), 0.0)
        return cls(v, np.cumsum(w) / tot, float(np.dot(v, w) / tot))

    @classmethod
    def step(cls, value):
        return cls(np.array([float(value)]), np.array([1.0]), float(value))


def map_distribution(sets, which="total", floor=1e-12) -> ErrorDistribution:
    """CDF of a conditional error map weighted by coincidence probability."""
    vals, wts = [], []
    for c in sets:
        sm = soft_info(c, floor)
        w = np.outer(trapezoid_weights(c.times), trapezoid_weights(c.times)) * sm.weight
        vals.append(getattr(sm, which) if which != "total" else sm.total)
        wts.append(w)
    return ErrorDistribution.from_samples(np.concatenate([v.ravel() for v in vals]),
                                          np.concatenate([w.ravel() for w in wts]))


# ---------------------------------------------------------------- error sources

@dataclass(frozen=True, eq=False)
class ScanResult:
    kind: str
    x: np.ndarray
    p_z: np.ndarray
    p_x: np.ndarray
    p_l: np.ndarray
    coefficient: float
    exponent: float
    intercept: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def total(self):
        return self.p_z + self.p_x + self.p_l


def unequal_g_sets(params: ModuleParams, dg_over_g, grid=None, n=60):
    grid = default_grid(params, n) if grid is None else grid
    m1 = params.replace(g=params.g * (1 + dg_over_g / 2))
    m2 = params.replace(g=params.g * (1 - dg_over_g / 2))
    return coincidence_correlators(m1, m2, grid=grid)


def doppler_sigma(T, mass=K.MASS_YB171, wavelength=K.WAVELENGTH, scale=1 / math.sqrt(2)):
    """Per-module detuning spread k_c v_rms * scale (rad/s) at temperature T (kelvin)."""
    v = math.sqrt(K.K_B * T / mass)
    return 2 * math.pi / wavelength * v * scale


def doppler_sets(params: ModuleParams, T, grid=None, n=60, nodes=7, scale=1 / math.sqrt(2), static=None):
    """Correlator sets of a thermal pair with Gauss-Hermite weights.

    ``static`` replaces the thermal ensemble by a fixed detuning difference.
    Returns [(weight, sets), ...].
    """
    grid = default_grid(params, n) if grid is None else grid
    if static is not None:
        m1 = params.replace(delta_doppler=static / 2)
        m2 = params.replace(delta_doppler=-static / 2)
        return [(1.0, coincidence_correlators(m1, m2, grid=grid))]
    sig = doppler_sigma(T, scale=scale)
    x, w = gauss_hermite_normal(nodes)
    tables = [module_table(params.replace(delta_doppler=float(sig * xi)), grid) for xi in x]
    out = []
    for i in range(nodes):
        for j in range(nodes):
            out.append((w[i] * w[j], coincidence_correlators(None, None, tables=(tables[i], tables[j]))))
    return out


def ensemble_error(weighted_sets, floor=1e-12):
    """Herald-probability-weighted (P_z, P_x, P_l) across an ensemble of pairs."""
    num = np.zeros(3)
    den = 0.0
    for wgt, sets in weighted_sets:
        pz = total_error(sets, floor)
        ph = sum(herald_probability(c) for c in sets)
        num += wgt * ph * np.array(pz)
        den += wgt * ph
    return tuple(float(v) for v in num / den)


def ensemble_distribution(weighted_sets, which="total", floor=1e-12) -> ErrorDistribution:
    vals, wts = [], []
    for wgt, sets in weighted_sets:
        for c in sets:
            sm = soft_info(c, floor)
            w = np.outer(trapezoid_weights(c.times), trapezoid_weights(c.times)) * sm.weight * wgt
            vals.append((sm.total if which == "total" else getattr(sm, which)).ravel())
            wts.append(w.ravel())
    return ErrorDistribution.from_samples(np.concatenate(vals), np.concatenate(wts))


def reexcitation_sets(params: ModuleParams, t_pi, n=60):
    p = params.replace(pulse=Pulse(t_pi))
    grid = DetectionGrid(shift_time(p), n)
    return coincidence_correlators(p, p, grid=grid)


def darkcount_error(R_dc, t_ent, eta):
    """Analytic false-herald error 4 t_ent R_dc / eta."""
    return 4 * t_ent * R_dc / eta


@dataclass(frozen=True, eq=False)
class DarkCountMaps:
    sets: list  # correlator sets including false heralds
    eps: list  # dark-count error maps per branch
    false_probability: float
    true_probability: float


def darkcount_maps(params: ModuleParams, R_dc, grid=None, n=60, table=None) -> DarkCountMaps:
    """Time-resolved dark-count error for identical modules.

    A false herald pairs one detected photon with a dark count in the
    complementary detector. The emitting module is left in its conditional
    post-emission state at the window end and the other module in its
    unconditional end-of-window state; the other module must not deliver a
    photon of its own, which happens with probability 1 - eta.
    """
    grid = default_grid(params, n) if grid is None else grid
    tab = module_table(params, grid) if table is None else table
    cfg = BeamsplitterConfig()
    true_sets = coincidence_correlators(None, None, cfg, tables=(tab, tab))
    w = trapezoid_weights(tab.times)
    G = tab.G
    last = len(tab.times) - 1
    eta = float(np.real(w @ (G[0, :, 0, 3, 0, 0, 0] + G[0, :, 0, 3, 1, 0, 0])))
    uncond = G[0, last, 0, 3, 0, :, 3].real  # Tr[M rho(T)], M in I, X, Z, Pi
    out_sets, eps = [], []
    p_false = 0.0
    for cs in true_sets:
        F = np.zeros((4,) + cs.P.shape)
        for role, (det, t_axis) in enumerate(((cs.detectors[0], 0), (cs.detectors[1], 1))):
            pol = POLS.index(det[1])
            coef = np.abs(cfg.coefficients(det[0])) ** 2
            # photon from module j at time t, conditional state at window end
            cond = G[:, last, pol, 0, 0, :, 3].real  # (t, M)
            vals = sum(coef[j] for j in range(2)) * cond * uncond[None, :]
            vals *= (1 - eta) * R_dc
            F += vals.T[:, :, None] if t_axis == 0 else vals.T[:, None, :]
        P = cs.P + F[0]
        new = CorrelatorSet(cs.times, P, cs.XX + F[1], cs.ZZ + F[2], cs.L + F[3], cs.branch, cs.detectors)
        base, with_dc = soft_info(cs), soft_info(new)
        eps.append(with_dc.total - base.total)
        out_sets.append(new)
        p_false += float(w @ F[0] @ w)
    p_true = sum(herald_probability(c) for c in true_sets)
    return DarkCountMaps(out_sets, eps, p_false, p_true)


def error_scan(kind, grid_values, params: ModuleParams | None = None, n=60, **kw) -> ScanResult:
    """Total error versus the scanned variable with the matching fit law.

    unequal_g: x = dg/g, fit a x^2. doppler: x = T in microkelvin, linear fit.
    reexcitation: x = t_pi in ns, fit a x^2. darkcount: x = R_dc in 1/s,
    analytic 4 t_ent R_dc / eta.
    """
    params = ModuleParams() if params is None else params
    x = np.asarray(grid_values, dtype=float)
    rows = []
    extra = {}
    if kind == "unequal_g":
        rows = [total_error(unequal_g_sets(params, v, n=n)) for v in x]
    elif kind == "doppler":
        scale = kw.get("scale", 1 / math.sqrt(2))
        rows = [ensemble_error(doppler_sets(params, v * 1e-6, n=n, scale=scale)) for v in x]
    elif kind == "reexcitation":
        rows = [total_error(reexcitation_sets(params, v * 1e-9, n=n)) for v in x]
    elif kind == "darkcount":
        from .spinphoton import emitted_probability

        t_ent = kw.get("t_ent", shift_time(params))
        eta = kw.get("eta", emitted_probability(params, t_ent))
        tot = np.array([darkcount_error(v, t_ent, eta) for v in x])
        extra = {"t_ent": t_ent, "eta": eta}
        z = np.zeros_like(tot)
        slope = float(tot[-1] / x[-1]) if x[-1] else 0.0
        return ScanResult(kind, x, z, z, tot, slope, 1.0, 0.0, extra)
    else:
        raise ValueError(f"unknown scan kind {kind!r}")
    arr = np.array(rows)
    tot = arr.sum(axis=1)
    if kind == "doppler":
        slope, icpt = np.polyfit(x, tot, 1)
        coef, expo, inter = float(slope), 1.0, float(icpt)
    else:
        coef, expo = fit_power_law(x, tot, 2.0)
        inter = 0.0
    return ScanResult(kind, x, arr[:, 0], arr[:, 1], arr[:, 2], coef, expo, inter, extra)


# ---------------------------------------------------------------- joint-space oracle

def joint_correlator(mod1: ModuleParams, mod2: ModuleParams, cfg: BeamsplitterConfig, det_first, det_second,
                     times, M="I", restrict_levels=None):
    """Direct two-module regression for one click order (oracle for the factorized route).

    Builds the product space of the two module models, applies the first
    detector mode at t1 and evaluates D^dag M D at t2 >= t1.
    """
    ms = [ModuleModel(m) for m in (mod1, mod2)]
    if restrict_levels is not None:
        ms = [restrict_levels(m) for m in ms]
    d1, d2 = ms[0].dim, ms[1].dim
    space = HilbertSpace((("module1", d1), ("module2", d2)))
    I1, I2 = np.eye(d1), np.eye(d2)
    lift = lambda o, k: np.kron(o, I2) if k == 0 else np.kron(I1, o)
    step = times[1] - times[0]
    specs = [m.spec(times[-1], step) for m in ms]
    if any(len(s.hamiltonians) > 1 for s in specs):
        raise ValueError("joint oracle supports constant Hamiltonians only")
    H = lift(specs[0].hamiltonians[0].entries, 0) + lift(specs[1].hamiltonians[0].entries, 1)
    J = [Operator(space, lift(c.entries, k)) for k, s in enumerate(specs) for c in s.jumps]
    spec = EvolutionSpec([Operator(space, H)], [], J, 0.0, times[-1], step, tol=1e-11)
    rho0 = DensityMatrix(space, np.kron(ms[0].rho0.entries, ms[1].rho0.entries))
    mode = lambda pol, k: lift(np.sqrt(ms[k].params.kappa) * ms[k].a[pol].entries, k)
    al, be = cfg.coefficients(det_first[0]), cfg.coefficients(det_second[0])
    A = al[0] * mode(det_first[1], 0) + al[1] * mode(det_first[1], 1)
    D = be[0] * mode(det_second[1], 0) + be[1] * mode(det_second[1], 1)
    q = {"I": (I1, I2), "XX": (ms[0].X.entries, ms[1].X.entries), "ZZ": (ms[0].Z.entries, ms[1].Z.entries),
         "L": (ms[0].Pi.entries, ms[1].Pi.entries)}[M]
    B = D.conj().T @ np.kron(*q) @ D
    return two_time_correlator(rho0, spec, A, B, times, times)
