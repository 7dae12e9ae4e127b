import math

import numpy as np
import pytest
from scipy.linalg import expm

from cavnet import constants as K
from cavnet.qdyn import EvolutionSpec, evolve, liouvillian
from cavnet.spinphoton import (
    LevelScheme,
    LightShift,
    ModuleModel,
    ModuleParams,
    Pulse,
    absorption_error,
    build_hamiltonian,
    build_jumps,
    cavity_zero_time,
    emission_run,
    emitted_probability,
    eta_bound,
    eta_vs_kappa,
    fit_power_law,
    initial_state,
    residual_photon,
    residual_photon_error,
    shift_time,
    with_shift,
)

P0 = ModuleParams()
WINDOW = 8 / P0.Gamma


def test_level_scheme_dimensions():
    assert LevelScheme(1).dim == 28
    assert LevelScheme(2).dim == 63
    with pytest.raises(ValueError):
        LevelScheme(0)


def test_params_validation():
    with pytest.raises(ValueError):
        ModuleParams(kappa=0.0)
    with pytest.raises(ValueError):
        ModuleParams(R_br=1.5)
    with pytest.raises(ValueError):
        LightShift(1.0, 0.0)
    with pytest.raises(ValueError):
        Pulse(20e-9, shape="gaussian")
    assert Pulse(20e-9).area() == pytest.approx(math.pi, abs=1e-6)


def test_hamiltonian_coupling_element():
    s = P0.scheme
    H = build_hamiltonian(P0, 0.0).entries
    assert H[s.index("0e"), s.index("0", 1, 0)] == pytest.approx(K.TWO_PI * 520e3, rel=1e-12)
    assert H[s.index("1e"), s.index("1", 0, 1)] == pytest.approx(K.TWO_PI * 520e3, rel=1e-12)
    # the sigma- mode does not couple |1>
    assert H[s.index("1e"), s.index("1", 1, 0)] == 0


def test_hamiltonian_zero_couplings():
    p = ModuleParams(g=0.0)
    assert not np.any(build_hamiltonian(p, 0.0).entries)


def test_hamiltonian_light_shift_diagonal():
    p = with_shift(P0, 100.0)
    s = p.scheme
    H = build_hamiltonian(p, p.light_shift.t_on + 1e-9).entries
    d = np.diag(H).real
    excited = [s.index(l, a, b) for l in ("0e", "1e") for a in range(2) for b in range(2)]
    assert np.allclose(d[excited], 100 * P0.g)
    others = np.delete(d, excited)
    assert not np.any(others)
    # before the turn-on there is no shift
    assert not np.any(np.diag(build_hamiltonian(p, 0.0).entries))


def test_jump_rates():
    s = P0.scheme
    J = build_jumps(P0)
    assert len(J) == 8
    e = s.index("0e")
    tot = sum((c.dag() @ c).entries for c in J[:4])[e, e].real
    assert tot == pytest.approx(P0.Gamma, rel=1e-12)
    c3 = J[2].entries[s.index("0"), e]
    assert c3 == pytest.approx(math.sqrt(0.64 * P0.Gamma), rel=1e-12)
    J1 = build_jumps(P0.replace(R_br=1.0))
    assert not np.any(J1[0].entries) and not np.any(J1[1].entries)


def test_initial_state():
    rho = initial_state(P0)
    rho.check()
    s = P0.scheme
    assert rho.entries[s.index("0e"), s.index("1e")] == pytest.approx(0.5)


def test_cavity_zero_time():
    assert cavity_zero_time(1.0, 2.0, 2.0) == pytest.approx(math.pi)
    assert shift_time(P0) * P0.Gamma == pytest.approx(2.646, abs=0.01)


def test_emission_eta():
    r = emission_run(P0, WINDOW)
    assert abs(r.eta_exact - 0.50) <= 0.02
    assert abs(r.eta - r.eta_exact) < 1e-6
    assert np.all(r.output_trace >= -1e-12)
    assert r.trace_error < 1e-9
    assert 0 <= r.eta_exact <= eta_bound(P0) + 1e-6


def test_emission_no_coupling():
    assert emitted_probability(P0.replace(g=0.0), WINDOW) == pytest.approx(0.0, abs=1e-15)


def test_emission_trace_matches_oracle():
    m = ModuleModel(P0)
    spec = m.spec(WINDOW, WINDOW / 400)
    traj = evolve(m.rho0, spec)
    L = liouvillian(spec.hamiltonians[0], spec.jumps)
    n = (P0.kappa * m.number()).entries
    for k in np.linspace(0, 400, 10).astype(int):
        ref = (expm(L * traj.times[k]) @ m.rho0.entries.reshape(-1)).reshape(m.dim, m.dim)
        want = np.trace(n @ ref).real
        got = np.trace(n @ traj.states[k]).real
        assert abs(got - want) < 1e-8 * P0.kappa


def test_reduced_space_matches_full():
    a = emitted_probability(P0, WINDOW)
    full = emission_run(P0, WINDOW, reduce=False, method="expm")
    assert abs(a - full.eta_exact) < 1e-10


def test_light_shift_drop():
    a = emitted_probability(P0, WINDOW)
    b = emitted_probability(with_shift(P0, 100.0), WINDOW)
    assert abs((1 - b / a) - 0.01) <= 0.005
    t_on = shift_time(P0)
    assert emitted_probability(P0, WINDOW, t_on) > 10 * emitted_probability(with_shift(P0, 100.0), WINDOW, t_on)


def test_doppler_detuning_lowers_eta():
    a = emitted_probability(P0, WINDOW)
    b = emitted_probability(P0.replace(delta_doppler=K.TWO_PI * 50e3), WINDOW)
    assert b < a


def test_truncation_two_photons():
    a = emitted_probability(P0, WINDOW)
    b = emitted_probability(P0.replace(n_max=2), WINDOW)
    assert abs(a - b) < 1e-6


def test_excitation_conservation():
    # no free-space decay and no pulse: excited population + photons + emitted photons is constant
    p = P0.replace(R_br=1.0, Gamma=0.0, Gamma3=0.0)
    m = ModuleModel(p)
    spec = m.spec(WINDOW, WINDOW / 400)
    traj = evolve(m.rho0, spec)
    s = p.scheme
    exc = (s.atom("0e", "0e") + s.atom("1e", "1e")).restrict(m.space)
    n = m.number()
    inside = traj.expect(exc).real + traj.expect(n).real
    rate = p.kappa * traj.expect(n).real
    h = spec.step
    emitted = np.concatenate([[0.0], np.cumsum(0.5 * h * (rate[1:] + rate[:-1]))])
    # trapezoid error bound: compare on the coarse grid with the exact integral at the end
    total = inside + emitted
    assert abs(total[-1] - 1) < 1e-4
    exact_end = emitted_probability(p, spec.stop)
    assert abs(inside[-1] + exact_end - 1) < 1e-8


def test_eta_vs_kappa():
    kg = K.TWO_PI * np.geomspace(0.1e6, 10e6, 15)
    scan = eta_vs_kappa(P0, kg)
    assert scan.kappa_opt / K.TWO_PI == pytest.approx(1.04e6, rel=0.10)
    assert abs(scan.eta_opt - 0.50) <= 0.02
    assert scan.C_opt == pytest.approx(2.5, abs=0.1)
    assert np.all(scan.eta < scan.eta0)


def test_eta_vs_kappa_rejects_nonpositive():
    with pytest.raises(ValueError):
        eta_vs_kappa(P0, [0.0, 1.0])


def test_residual_photon_floor():
    r = residual_photon_error(P0, 100.0, 3e-3)
    assert r.eps_r < 1e-5


def test_residual_photon_scaling():
    a = residual_photon_error(P0, 200.0).eps_r
    b = residual_photon_error(P0, 400.0).eps_r
    assert b / a == pytest.approx(0.25, rel=0.20)


def test_residual_photon_no_shift_is_tail():
    t_on = shift_time(P0)
    tail = emitted_probability(P0, t_on + 60 / P0.Gamma, t_from=t_on)
    assert residual_photon(P0, 0.0) == pytest.approx(tail, rel=1e-6)
    r = residual_photon_error(P0, 0.0)
    assert r.eps_r == pytest.approx(r.p_residual * r.eta / 2, rel=1e-12)


@pytest.fixture(scope="module")
def absorption_points():
    x = np.array([100.0, 300.0, 1000.0, 3000.0, 10000.0])
    return x, [absorption_error(P0, v) for v in x]


def test_absorption_power_law(absorption_points):
    x, res = absorption_points
    tot = np.array([r.total for r in res])
    _, p = fit_power_law(x, tot)
    assert p == pytest.approx(-2.0, abs=0.05)
    coef, _ = fit_power_law(x, tot, -2.0)
    assert coef == pytest.approx(3.5, abs=0.5)


def test_absorption_at_2000():
    r = absorption_error(P0, 2000.0)
    assert r.total == pytest.approx(8.8e-7, rel=0.15)


def test_absorption_components_comparable(absorption_points):
    _, res = absorption_points
    r = res[2]
    comps = [r.p_x + r.p_y, r.p_z + r.p_y, r.p_leak]
    assert max(comps) / min(comps) < 3.0


def test_absorption_channel_is_physical(absorption_points):
    _, res = absorption_points
    for r in res:
        assert min(r.p_x, r.p_y, r.p_z, r.p_leak) > -1e-12
        assert r.total < 1


def test_fit_power_law_exact():
    x = np.array([1.0, 2.0, 4.0])
    assert fit_power_law(x, 3 * x**-2) == pytest.approx((3.0, -2.0))
    assert fit_power_law(x, 3 * x**-2, -2.0) == pytest.approx((3.0, -2.0))
