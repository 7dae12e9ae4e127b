"""Ring-cavity design calculators: coupling strength, finesse, mode profile,
twist-induced polarization splitting and the sensitivity of g to atom position."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from . import constants as K


def wavenumber(wavelength: float) -> float:
    return K.TWO_PI / wavelength


def coupling_from_geometry(w0, L, wavelength=K.WAVELENGTH, Gamma=K.GAMMA, R_br=K.R_BR) -> float:
    """Peak coupling g (rad/s) of a running-wave ring cavity.

    g = sqrt(3 c R_br Gamma / (k^2 w0^2 L)) with L the round-trip length.
    """
    for name, v in (("w0", w0), ("L", L), ("wavelength", wavelength), ("Gamma", Gamma), ("R_br", R_br)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v!r}")
    k = wavenumber(wavelength)
    return float(np.sqrt(3 * K.C_LIGHT * R_br * Gamma / (k**2 * w0**2 * L)))


def branching_from_coupling(g, w0, L, wavelength=K.WAVELENGTH, Gamma=K.GAMMA) -> float:
    """Inverse of coupling_from_geometry for R_br."""
    k = wavenumber(wavelength)
    return float(g**2 * k**2 * w0**2 * L / (3 * K.C_LIGHT * Gamma))


def finesse_fsr(L, kappa):
    """Return (FSR in Hz, F_e = 2 pi c/(L kappa), F_h = pi c/(L kappa)).

    F_e treats kappa as the full energy decay rate (linewidth kappa/2pi).
    F_h treats kappa as a half linewidth; this is the reading that gives
    F ~ 2070 at the reference operating point.
    """
    if not (L > 0 and kappa > 0):
        raise ValueError("L and kappa must be positive")
    fsr = K.C_LIGHT / L
    return fsr, K.TWO_PI * fsr / kappa, np.pi * fsr / kappa


@dataclass(frozen=True)
class CouplingBudget:
    g: float
    kappa: float
    Gamma: float
    R_br: float
    finesse_energy: float
    finesse_half: float

    @property
    def cooperativity(self) -> float:
        return 4 * self.g**2 / (self.kappa * self.Gamma)

    @property
    def eta0(self) -> float:
        C = self.cooperativity
        return C / (1 + C)


def coupling_budget(w0=K.WAIST, L=K.ROUND_TRIP, wavelength=K.WAVELENGTH, Gamma=K.GAMMA,
                    R_br=K.R_BR, kappa=K.KAPPA) -> CouplingBudget:
    g = coupling_from_geometry(w0, L, wavelength, Gamma, R_br)
    _, fe, fh = finesse_fsr(L, kappa)
    return CouplingBudget(g, kappa, Gamma, R_br, fe, fh)


@dataclass(frozen=True)
class ModeProperties:
    """Gaussian mode at the atom plane plus polarization-splitting data."""

    w0: float = K.WAIST
    wavelength: float = K.WAVELENGTH
    L: float = K.ROUND_TRIP
    theta_rot: float = 0.0

    @property
    def z_R(self) -> float:
        return np.pi * self.w0**2 / self.wavelength

    @property
    def fsr(self) -> float:
        return K.C_LIGHT / self.L

    @property
    def splitting(self) -> float:
        """sigma+/sigma- frequency splitting in Hz (signed)."""
        return self.fsr * self.theta_rot / K.TWO_PI

    def waist_at(self, z):
        return self.w0 * np.sqrt(1 + (np.asarray(z) / self.z_R) ** 2)


def mode_profile(props: ModeProperties, x, y=0.0, z=0.0):
    """Field amplitude g(x, y, z)/g_max of the running-wave Gaussian mode; z is the cavity axis."""
    x, y, z = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, z)))
    w = props.waist_at(z)
    out = (props.w0 / w) * np.exp(-(x**2 + y**2) / w**2)
    return out if out.ndim else float(out)


def contour_samples(props: ModeProperties, level=0.9, n=181):
    """Points (x, z) on the g = level*g_max contour in the x-z plane."""
    z_edge = props.z_R * np.sqrt(level**-2 - 1)
    z = np.linspace(-z_edge, z_edge, n)
    w = props.waist_at(z)
    arg = np.clip(np.log(props.w0 / (w * level)), 0.0, None)
    x = w * np.sqrt(arg)
    return np.concatenate([z, z[::-1]]), np.concatenate([x, -x[::-1]])


# ---------------------------------------------------------------- geometry

@dataclass(frozen=True)
class CavityGeometry:
    mirrors: np.ndarray
    L: float
    roc: tuple = (0.0127, 0.0127, np.inf, np.inf)
    twist: float = 0.0
    tol: float = 1e-12

    def __post_init__(self):
        m = np.asarray(self.mirrors, dtype=float)
        if m.shape != (4, 3):
            raise ValueError(f"expected 4 mirrors in 3D, got shape {m.shape}")
        seg = self.segments
        if np.any(np.linalg.norm(seg, axis=1) == 0):
            raise ValueError("coincident mirrors")
        length = np.linalg.norm(seg, axis=1).sum()
        if abs(length - self.L) > 1e-9 * self.L:
            raise ValueError(f"path length {length!r} differs from L={self.L!r}")

    @property
    def segments(self) -> np.ndarray:
        m = np.asarray(self.mirrors, dtype=float)
        return np.roll(m, -1, axis=0) - m

    @classmethod
    def from_segments(cls, start, segments, **kw):
        """Build from an explicit list of segment vectors; they must close."""
        seg = np.asarray(segments, dtype=float)
        if seg.shape != (4, 3):
            raise ValueError("need four 3D segment vectors")
        scale = np.abs(seg).max()
        if np.linalg.norm(seg.sum(axis=0)) > 1e-12 * max(scale, 1.0):
            raise ValueError("segment vectors do not close the path")
        mirrors = np.asarray(start, float) + np.vstack([np.zeros(3), np.cumsum(seg, axis=0)[:-1]])
        L = float(np.linalg.norm(seg, axis=1).sum())
        return cls(mirrors, L, **kw)


def bowtie_geometry(opening_deg=K.OPENING_DEG, twist_deg=K.TWIST_DEG, L=K.ROUND_TRIP) -> CavityGeometry:
    """Four-mirror bowtie with vertex angle `opening_deg` at each mirror.

    The twist raises two adjacent mirrors so the two arms that connect the
    raised and unraised pairs climb at `twist_deg`. The path is then scaled
    to round-trip length L.
    """
    H = 1.0
    W = H * np.tan(np.radians(opening_deg))
    m = np.array([[-W / 2, H / 2, 0.0], [W / 2, -H / 2, 0.0], [W / 2, H / 2, 0.0], [-W / 2, -H / 2, 0.0]])
    span = np.linalg.norm(m[2, :2] - m[1, :2])
    h = span * np.tan(np.radians(abs(twist_deg))) * np.sign(twist_deg)
    m[0, 2] += h
    m[1, 2] += h
    m *= L / np.linalg.norm(np.roll(m, -1, axis=0) - m, axis=1).sum()
    return CavityGeometry(m, L, twist=np.radians(twist_deg))


def frame_rotation(mirrors) -> float:
    """Rotation angle of the transverse frame after one round trip.

    Each mirror reflects the transverse polarization vector about its plane
    of incidence; the sign change on reflection is included so a planar
    path returns zero.
    """
    P = np.asarray(mirrors, dtype=float)
    n = len(P)
    k = np.roll(P, -1, axis=0) - P
    k /= np.linalg.norm(k, axis=1)[:, None]
    e = np.cross(k[0], [0.0, 0.0, 1.0])
    if np.linalg.norm(e) < 1e-9:
        e = np.cross(k[0], [0.0, 1.0, 0.0])
    e /= np.linalg.norm(e)
    e0 = e.copy()
    for i in range(1, n + 1):
        nrm = k[i % n] - k[i - 1]
        nrm /= np.linalg.norm(nrm)
        e = -(e - 2 * np.dot(e, nrm) * nrm)
    f0 = np.cross(k[0], e0)
    return float(np.arctan2(np.dot(e, f0), np.dot(e, e0)))


def twist_splitting(geom: CavityGeometry, w0=K.WAIST, wavelength=K.WAVELENGTH) -> ModeProperties:
    """Fill theta_rot and the sigma+/- splitting for a closed 4-mirror path.

    A frame rotation by phi gives circular eigenmodes with round-trip phases
    differing by 2*phi; the splitting is FSR*theta_rot/(2 pi) with
    theta_rot = 2*phi. Counter-propagating sigma-/+ share the same shift.
    """
    theta = 2 * frame_rotation(geom.mirrors)
    if abs(theta) < 1e-13:
        theta = 0.0
    return ModeProperties(w0=w0, wavelength=wavelength, L=geom.L, theta_rot=theta)


# ------------------------------------------------------------- sensitivity

def alignment_sensitivity(props: ModeProperties, displacement) -> float:
    """delta_g/g = 1 - g(dx, dy, dz)/g_max."""
    dx, dy, dz = displacement
    return float(1.0 - mode_profile(props, dx, dy, dz))


def alignment_tolerance(props: ModeProperties, target: float):
    """Displacement along each of x, y, z that alone produces delta_g/g = target."""
    if not 0 < target < 1:
        raise ValueError("target must lie in (0, 1)")
    out = []
    for axis in range(3):
        def f(d, axis=axis):
            v = [0.0, 0.0, 0.0]
            v[axis] = d
            return alignment_sensitivity(props, v) - target
        hi = props.w0
        while f(hi) < 0:
            hi *= 2
        out.append(brentq(f, 0.0, hi, xtol=1e-18, rtol=1e-14))
    return tuple(out)


@dataclass(frozen=True)
class ThermalSpread:
    dg_over_g: float
    kc_vrms: float
    sigma: tuple
    v_rms: float


def thermal_dg(T, trap_freqs, mass=K.MASS_YB171, props: ModeProperties = ModeProperties(),
               n_axial=24) -> ThermalSpread:
    """rms fractional coupling reduction and Doppler width for a thermal atom.

    trap_freqs are angular frequencies (wx, wy, wz), z along the cavity
    axis. Returns sqrt(<(1 - g/g_max)^2>) over the Gaussian position
    distribution; transverse averages are done in closed form and the axial
    one by Gauss-Hermite quadrature.
    """
    if T < 0:
        raise ValueError("temperature must be non-negative")
    v_rms = np.sqrt(K.K_B * T / mass)
    kc_vrms = wavenumber(props.wavelength) * v_rms
    if T == 0:
        return ThermalSpread(0.0, 0.0, (0.0, 0.0, 0.0), 0.0)
    sig = tuple(v_rms / w for w in trap_freqs)
    zs, ws = np.polynomial.hermite_e.hermegauss(n_axial)
    ws = ws / ws.sum()
    w = props.waist_at(zs * sig[2])
    amp = props.w0 / w
    sx2, sy2 = sig[0] ** 2, sig[1] ** 2
    m1 = amp / np.sqrt((1 + 2 * sx2 / w**2) * (1 + 2 * sy2 / w**2))
    m2 = amp**2 / np.sqrt((1 + 4 * sx2 / w**2) * (1 + 4 * sy2 / w**2))
    msq = 1 - 2 * np.dot(ws, m1) + np.dot(ws, m2)
    return ThermalSpread(float(np.sqrt(max(msq, 0.0))), float(kc_vrms), sig, float(v_rms))


def trap_for_dg(T, target, axial_ratio=0.2, mass=K.MASS_YB171, props: ModeProperties = ModeProperties()):
    """Transverse trap angular frequency giving thermal delta_g/g = target (axial = ratio * transverse)."""
    def f(lw):
        w = np.exp(lw)
        return thermal_dg(T, (w, w, axial_ratio * w), mass, props).dg_over_g - target
    return float(np.exp(brentq(f, np.log(K.TWO_PI * 10.0), np.log(K.TWO_PI * 1e8))))


def cavity_summary(props: ModeProperties, budget: CouplingBudget) -> dict:
    return {
        "g_max_over_2pi_hz": budget.g / K.TWO_PI,
        "cooperativity": budget.cooperativity,
        "eta0": budget.eta0,
        "fsr_hz": props.fsr,
        "finesse_energy": budget.finesse_energy,
        "finesse_half": budget.finesse_half,
        "theta_rot_rad": props.theta_rot,
        "splitting_hz": props.splitting,
        "z_R_m": props.z_R,
    }
