import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavnet import constants as K
from cavnet.acceptance import factorized_vs_joint
from cavnet.heralding import (
    BeamsplitterConfig,
    DetectionGrid,
    ErrorDistribution,
    coincidence_correlators,
    darkcount_error,
    darkcount_maps,
    default_grid,
    doppler_sets,
    ensemble_distribution,
    ensemble_error,
    error_scan,
    herald_probability,
    map_distribution,
    module_table,
    reexcitation_sets,
    soft_info,
    total_error,
    unequal_g_sets,
)
from cavnet.spinphoton import ModuleParams, emitted_probability, shift_time

P0 = ModuleParams()
N = 40


@pytest.fixture(scope="module")
def ideal_sets():
    return coincidence_correlators(P0, P0, grid=default_grid(P0, N))


@pytest.fixture(scope="module")
def unequal_sets():
    return unequal_g_sets(P0, 0.031, n=N)


# ------------------------------------------------------------------ beamsplitter

def test_beamsplitter_identity():
    b, c = 0.3 + 0.1j, -0.7j
    assert BeamsplitterConfig(0.0).matrix == pytest.approx(np.eye(2))
    d, e = BeamsplitterConfig(0.0, 0.4).matrix @ [b, c]
    assert (d, e) == pytest.approx((b, c))


@settings(max_examples=30, deadline=None)
@given(xi=st.floats(0, 2 * math.pi), phi=st.floats(0, 2 * math.pi),
       b=st.complex_numbers(max_magnitude=10), c=st.complex_numbers(max_magnitude=10))
def test_beamsplitter_unitary(xi, phi, b, c):
    from cavnet.heralding import beamsplitter_transform

    cfg = BeamsplitterConfig(xi, phi)
    U = cfg.matrix
    assert np.max(np.abs(U @ U.conj().T - np.eye(2))) < 1e-14
    d, e = beamsplitter_transform(cfg, b, c)
    assert abs(abs(d) ** 2 + abs(e) ** 2 - abs(b) ** 2 - abs(c) ** 2) < 1e-12 * max(1.0, abs(b) ** 2 + abs(c) ** 2)


def test_beamsplitter_relation():
    cfg = BeamsplitterConfig(0.4, 0.9)
    b, c = 1.0, 0.5j
    from cavnet.heralding import beamsplitter_transform

    d, e = beamsplitter_transform(cfg, b, c)
    assert d == pytest.approx(math.cos(0.4) * b - np.exp(-0.9j) * math.sin(0.4) * c)
    assert e == pytest.approx(np.exp(0.9j) * math.sin(0.4) * b + math.cos(0.4) * c)


def test_grid_uniform():
    g = DetectionGrid(1e-6, 50)
    assert np.max(np.abs(np.diff(g.times) - g.h)) < 1e-12 * g.window
    assert g.times[0] == 0 and g.times[-1] == pytest.approx(1e-6)


# ------------------------------------------------------------------ correlators

def test_ideal_modules_are_bell_states(ideal_sets):
    for cs in ideal_sets:
        m = cs.P > 1e-6 * cs.P.max()
        assert np.max(np.abs(cs.XX[m] / cs.P[m] - cs.xx_sign)) < 1e-8
        assert np.max(np.abs(cs.ZZ[m] / cs.P[m] + 1)) < 1e-8
        assert cs.P.min() >= -1e-12 * cs.P.max()


def test_correlator_bounds(unequal_sets):
    for cs in unequal_sets:
        s = 1e-10 * cs.P.max()
        assert np.all(np.abs(cs.XX) <= cs.P + s)
        assert np.all(np.abs(cs.ZZ) <= cs.P + s)
        assert np.all(cs.L <= cs.P + s)
        assert cs.max_imag < 1e-10 * cs.P.max()


def test_herald_probability_total(ideal_sets):
    grid = default_grid(P0, N)
    eta = emitted_probability(P0, grid.window)
    tot = sum(herald_probability(c) for c in ideal_sets)
    assert tot == pytest.approx(eta**2 / 2, rel=0.02)


def test_branch_symmetry(ideal_sets):
    minus = sum(herald_probability(c) for c in ideal_sets if c.branch == "psi-")
    plus = sum(herald_probability(c) for c in ideal_sets if c.branch == "psi+")
    assert abs(minus - plus) < 1e-10


def test_factorized_equals_joint():
    assert factorized_vs_joint(n=9) < 1e-8


def test_module_swap_invariance():
    p1, p2 = P0.replace(g=P0.g * 1.02), P0.replace(g=P0.g * 0.98)
    grid = default_grid(P0, 24)
    a = coincidence_correlators(p1, p2, grid=grid)
    b = coincidence_correlators(p2, p1, grid=grid)
    assert np.allclose(total_error(a), total_error(b), rtol=0, atol=1e-10)
    # swapping modules and detectors transposes the maps
    ta, tb = module_table(p1, grid), module_table(p2, grid)
    from cavnet.heralding import pair_correlators

    cfg = BeamsplitterConfig()
    x = pair_correlators(ta, tb, cfg, ("d", "+"), ("e", "-"), "psi-")
    y = pair_correlators(tb, ta, cfg, ("e", "-"), ("d", "+"), "psi-")
    assert np.allclose(x.P, y.P.T, rtol=1e-10, atol=1e-10 * x.P.max())


# ------------------------------------------------------------------ soft information

def test_soft_info_ideal(ideal_sets):
    for cs in ideal_sets:
        sm = soft_info(cs)
        for m in (sm.p_z, sm.p_x, sm.p_l):
            assert np.max(np.abs(m)) < 1e-8
    assert total_error(ideal_sets) == pytest.approx((0, 0, 0), abs=1e-8)


def test_soft_info_range(unequal_sets):
    for cs in unequal_sets:
        sm = soft_info(cs)
        for m in (sm.p_z, sm.p_x, sm.p_l):
            assert np.all(m >= -1e-9) and np.all(m <= 1 + 1e-9)
            assert not np.any(np.isnan(m))
        assert np.allclose(sm.p_l, np.where(sm.mask, sm.p_l, 1 - cs.L / np.where(sm.mask, 1, cs.P)))


def test_unequal_g_map_structure(unequal_sets):
    cs = unequal_sets[0]
    sm = soft_info(cs)
    diag = np.diag(sm.p_z)
    assert np.max(diag) < 1e-6
    # grows away from the diagonal
    i = len(cs.times) // 4
    assert sm.p_z[i, -1] > sm.p_z[i, i + 1]
    assert sm.p_z[i, -1] > 10 * max(diag[i], 1e-12)


def test_unequal_g_total():
    pz, px, pl = total_error(unequal_g_sets(P0, 0.05, n=N))
    assert pz + px + pl == pytest.approx(0.394 * 0.05**2, rel=0.15)


def test_doppler_pair_suppressed_on_diagonal():
    ws = doppler_sets(P0, 0.0, n=30, static=K.TWO_PI * 30e3)
    cs = ws[0][1][0]
    sm = soft_info(cs)
    i = 5
    assert sm.p_z[i, i] < 1e-3 * sm.p_z[i, -1]


def test_grid_refinement():
    a = np.array(total_error(unequal_g_sets(P0, 0.05, n=30)))
    b = np.array(total_error(unequal_g_sets(P0, 0.05, n=60)))
    assert np.sum(np.abs(a - b)) < 0.02 * np.sum(b)


# ------------------------------------------------------------------ distributions

def test_distribution_mean_matches_total(unequal_sets):
    d = map_distribution(unequal_sets)
    assert d.mean == pytest.approx(sum(total_error(unequal_sets)), rel=1e-9)
    assert np.all(np.diff(d.cdf) >= 0)
    assert d.cdf[-1] == pytest.approx(1, abs=1e-9)


def test_unequal_g_distribution(unequal_sets):
    d = map_distribution(unequal_sets)
    assert 2e-4 <= d.mean <= 8e-4
    assert d.median <= 1.2e-4


def test_error_distribution_helpers():
    s = ErrorDistribution.step(2.8e-5)
    assert s.median == 2.8e-5 and s.mean == 2.8e-5
    d = ErrorDistribution.from_samples([3, 1, 2], [1, 1, 2])
    assert list(d.values) == [1, 2, 3]
    assert d.cdf == pytest.approx([0.25, 0.75, 1.0])
    assert d.mean == pytest.approx(2.0)
    assert ErrorDistribution.from_samples([1.0], [0.0]).mean == 0.0


def test_ensemble_distribution_mean():
    ws = doppler_sets(P0, 10e-6, n=20, nodes=3)
    d = ensemble_distribution(ws)
    assert d.mean == pytest.approx(sum(ensemble_error(ws)), rel=1e-9)


# ------------------------------------------------------------------ error sources

def test_doppler_total_at_10uK():
    tot = sum(ensemble_error(doppler_sets(P0, 10e-6, n=N)))
    assert tot == pytest.approx(7.3e-5, rel=0.20)


def test_doppler_linear_in_temperature():
    res = error_scan("doppler", [1.0, 5.0, 10.0, 20.0], P0, n=30)
    assert abs(res.intercept) < 1e-7
    fit = res.coefficient * res.x + res.intercept
    assert np.max(np.abs(fit - res.total) / res.total) < 0.02


def test_unequal_g_scan_coefficient():
    res = error_scan("unequal_g", np.geomspace(0.005, 0.1, 5), P0, n=N)
    assert res.coefficient == pytest.approx(0.394, rel=0.10)


def test_reexcitation_scan_coefficient():
    res = error_scan("reexcitation", [10.0, 20.0, 40.0], P0, n=N)
    assert res.coefficient == pytest.approx(6.8e-8, rel=0.25)


def test_reexcitation_is_time_blind():
    sets = reexcitation_sets(P0, 20e-9, n=N)
    d = map_distribution(sets)
    spread = (d.quantile(0.95) - d.quantile(0.05)) / d.mean
    assert spread < 0.2
    assert d.mean == pytest.approx(2.8e-5, rel=0.25)


def test_darkcount_analytic():
    assert darkcount_error(10.0, 1e-6, 0.5) == pytest.approx(8e-5, rel=1e-12)
    res = error_scan("darkcount", [10.0], P0, t_ent=1e-6, eta=0.5)
    assert res.total[0] == pytest.approx(8e-5, rel=1e-12)
    t = shift_time(P0)
    res = error_scan("darkcount", [0.0, 10.0], P0)
    assert res.total[0] == 0.0
    assert res.total[1] == pytest.approx(4 * t * 10 / emitted_probability(P0, t), rel=1e-12)


def test_darkcount_map_edge():
    dc = darkcount_maps(P0, 10.0, n=30)
    eps = dc.eps[0]
    i, j = np.unravel_index(int(np.argmax(eps)), eps.shape)
    assert i in (0, 30) or j in (0, 30)
    assert dc.false_probability > 0
    zero = darkcount_maps(P0, 0.0, n=10)
    assert zero.false_probability == 0.0
    assert np.max(np.abs(zero.eps[0])) < 1e-12


def test_unknown_scan_kind():
    with pytest.raises(ValueError):
        error_scan("bogus", [1.0], P0)
