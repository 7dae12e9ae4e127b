import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavnet import constants as K
from cavnet.cavity import (
    CavityGeometry,
    ModeProperties,
    alignment_sensitivity,
    alignment_tolerance,
    bowtie_geometry,
    branching_from_coupling,
    contour_samples,
    coupling_budget,
    coupling_from_geometry,
    finesse_fsr,
    frame_rotation,
    mode_profile,
    thermal_dg,
    trap_for_dg,
    twist_splitting,
)

PROPS = ModeProperties()
TRAP = (K.TWO_PI * 10794.0, K.TWO_PI * 10794.0, K.TWO_PI * 2159.0)


def test_coupling_from_geometry():
    g = coupling_from_geometry(10e-6, 6.96e-2, 1389e-9, K.TWO_PI * 418e3, 0.64)
    assert g / K.TWO_PI == pytest.approx(520e3, rel=0.01)
    # independent evaluation of g = sqrt(3 c R Gamma / (k^2 w0^2 L))
    k = 2 * math.pi / 1389e-9
    ref = math.sqrt(3 * 299792458.0 * 0.64 * K.TWO_PI * 418e3 / (k**2 * 1e-10 * 6.96e-2))
    assert g == pytest.approx(ref, rel=1e-12)
    assert branching_from_coupling(g, 10e-6, 6.96e-2) == pytest.approx(0.64, rel=1e-12)


def test_coupling_branching_scaling():
    a = coupling_from_geometry(10e-6, 0.07, R_br=0.3)
    b = coupling_from_geometry(10e-6, 0.07, R_br=1.0)
    assert a / b == pytest.approx(math.sqrt(0.3), rel=1e-12)


def test_coupling_homogeneity():
    g = coupling_from_geometry(10e-6, 0.07)
    assert coupling_from_geometry(20e-6, 0.07) == pytest.approx(g / 2, rel=1e-12)
    assert coupling_from_geometry(10e-6, 0.28) == pytest.approx(g / 2, rel=1e-12)


def test_coupling_rejects_nonpositive():
    with pytest.raises(ValueError, match="w0"):
        coupling_from_geometry(0.0, 0.07)
    with pytest.raises(ValueError, match="L"):
        coupling_from_geometry(1e-5, -1.0)


def test_cooperativity_budget():
    cb = coupling_budget()
    assert cb.cooperativity == pytest.approx(4 * cb.g**2 / (cb.kappa * cb.Gamma))
    p = coupling_budget(R_br=0.64)
    # with g held at its nominal value
    C = 4 * K.G_MAX**2 / (K.KAPPA * K.GAMMA)
    assert C == pytest.approx(2.49, abs=0.02)
    assert C / (C + 1) == pytest.approx(0.713, abs=0.005)
    assert p.eta0 == pytest.approx(p.cooperativity / (1 + p.cooperativity))


def test_finesse_and_fsr():
    fsr, fe, fh = finesse_fsr(6.96e-2, K.TWO_PI * 1.04e6)
    assert fsr == pytest.approx(4.31e9, rel=0.002)
    assert fh == pytest.approx(2070, rel=0.01)
    assert fe == pytest.approx(2 * fh, rel=1e-12)
    _, fe2, fh2 = finesse_fsr(6.96e-2, K.TWO_PI * 0.52e6)
    assert fe2 == pytest.approx(2 * fe) and fh2 == pytest.approx(2 * fh)
    # FSR times round-trip time
    assert fsr * (6.96e-2 / K.C_LIGHT) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        finesse_fsr(0.0, 1.0)


def test_mode_profile_values():
    assert mode_profile(PROPS, 0.0) == 1.0
    x = 10e-6 * math.sqrt(math.log(1 / 0.9))
    assert x == pytest.approx(3.25e-6, abs=0.01e-6)
    assert mode_profile(PROPS, x) == pytest.approx(0.9, abs=1e-12)
    assert mode_profile(PROPS, 0.0, 0.0, PROPS.z_R) == pytest.approx(1 / math.sqrt(2), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(-5e-5, 5e-5), y=st.floats(-5e-5, 5e-5), z=st.floats(-1e-3, 1e-3))
def test_mode_profile_bounded(x, y, z):
    v = mode_profile(PROPS, x, y, z)
    assert v <= 1.0
    if (x, y, z) != (0.0, 0.0, 0.0) and max(abs(x), abs(y), abs(z)) > 1e-9:
        assert v < 1.0


def test_contour_on_level():
    z, x = contour_samples(PROPS, 0.9, 51)
    assert np.allclose(mode_profile(PROPS, x, 0.0, z), 0.9, atol=1e-9)


def test_geometry_validation():
    good = bowtie_geometry()
    assert good.L == pytest.approx(6.96e-2)
    with pytest.raises(ValueError):
        CavityGeometry(np.zeros((3, 3)), 1.0)
    m = np.array(good.mirrors)
    m[1] = m[0]
    with pytest.raises(ValueError):
        CavityGeometry(m, 1.0)
    with pytest.raises(ValueError):
        CavityGeometry(good.mirrors, good.L * 1.01)
    with pytest.raises(ValueError):
        CavityGeometry.from_segments([0, 0, 0], [[1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -0.5, 0]])
    sq = CavityGeometry.from_segments([0, 0, 0], [[1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0]])
    assert sq.L == pytest.approx(4.0)


def test_planar_no_rotation():
    props = twist_splitting(bowtie_geometry(11.0, 0.0))
    assert props.theta_rot == 0.0 and props.splitting == 0.0


def test_twist_splitting_reference():
    props = twist_splitting(bowtie_geometry(11.0, 11.0, 6.96e-2))
    assert abs(props.splitting) == pytest.approx(133e6, rel=0.10)


def test_twist_splitting_in_design_window():
    props = twist_splitting(bowtie_geometry(11.0, 11.0, 6.96e-2))
    assert 100e6 <= abs(props.splitting) <= 150e6


def test_twist_sign_symmetry():
    a = twist_splitting(bowtie_geometry(11.0, 7.0)).splitting
    b = twist_splitting(bowtie_geometry(11.0, -7.0)).splitting
    assert a == pytest.approx(-b, rel=1e-9)
    # reversing the propagation direction keeps the magnitude
    m = bowtie_geometry(11.0, 7.0).mirrors
    assert abs(frame_rotation(m[::-1])) == pytest.approx(abs(frame_rotation(m)), rel=1e-9)


def test_alignment_zero():
    assert alignment_sensitivity(PROPS, (0.0, 0.0, 0.0)) == 0.0


def test_alignment_transverse_inverse():
    # exact inverse of the transverse Gaussian at delta_g/g = 0.05
    dx = 10e-6 * math.sqrt(math.log(1 / 0.95))
    assert alignment_sensitivity(PROPS, (dx, 0.0, 0.0)) == pytest.approx(0.05, abs=1e-6)
    tx, ty, tz = alignment_tolerance(PROPS, 0.05)
    assert tx == pytest.approx(dx, rel=1e-9) and ty == pytest.approx(dx, rel=1e-9)
    assert alignment_sensitivity(PROPS, (0.0, 0.0, tz)) == pytest.approx(0.05, abs=1e-9)
    with pytest.raises(ValueError):
        alignment_tolerance(PROPS, 1.5)


def test_alignment_reference_triple():
    vals = [alignment_sensitivity(PROPS, d) for d in ((0.87e-6, 0, 0), (0, 2.2e-6, 0), (0, 0, 3.8e-6))]
    # the transverse 2.2 um entry is consistent with a 5 % tolerance in this mode model
    assert vals[1] == pytest.approx(0.05, rel=0.10)
    assert all(0 <= v < 0.05 for v in vals)


def test_thermal_doppler_width():
    th = thermal_dg(10e-6, TRAP)
    assert th.kc_vrms / K.TWO_PI == pytest.approx(16e3, rel=0.05)
    assert th.dg_over_g == pytest.approx(3e-3, rel=0.30)


def test_thermal_zero_temperature():
    th = thermal_dg(0.0, TRAP)
    assert th.dg_over_g == 0.0 and th.kc_vrms == 0.0
    with pytest.raises(ValueError):
        thermal_dg(-1.0, TRAP)


def test_thermal_matches_monte_carlo():
    th = thermal_dg(10e-6, TRAP)
    rng = np.random.default_rng(0)
    pos = rng.normal(size=(400_000, 3)) * np.array(th.sigma)
    f = mode_profile(PROPS, pos[:, 0], pos[:, 1], pos[:, 2])
    mc = math.sqrt(np.mean((1 - f) ** 2))
    assert th.dg_over_g == pytest.approx(mc, rel=0.01)


def test_trap_for_dg_roundtrip():
    w = trap_for_dg(10e-6, 3e-3)
    th = thermal_dg(10e-6, (w, w, 0.2 * w))
    assert th.dg_over_g == pytest.approx(3e-3, rel=1e-6)
