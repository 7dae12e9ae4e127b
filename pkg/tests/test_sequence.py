import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavnet import constants as K
from cavnet.cavity import ModeProperties
from cavnet.sequence import (
    ArrayLayout,
    SequenceParams,
    bell_rate,
    mean_t_ent,
    nr_distribution,
    sequence_duration,
    sequence_error_inputs,
    site_layout,
    site_t_ent,
    timing_schedule,
)

PROPS = ModeProperties()
T_REF = 2.646 / K.GAMMA  # cavity-zero time at g_max


def test_layout_count():
    lay = site_layout(PROPS, 2.5e-6, 0.9)
    assert abs(lay.n_sites - 204) <= 6
    assert np.all(lay.g >= 0.9 * K.G_MAX * (1 - 1e-12))


def test_layout_single_site():
    lay = site_layout(PROPS, 1e3, 0.9)
    assert lay.n_sites == 1
    assert lay.x[0] == 0 and lay.z[0] == 0


def test_layout_monotone_in_threshold():
    assert site_layout(PROPS, 2.5e-6, 0.99).n_sites < site_layout(PROPS, 2.5e-6, 0.9).n_sites


def test_layout_bad_inputs():
    with pytest.raises(ValueError):
        site_layout(PROPS, 0.0, 0.9)
    assert site_layout(PROPS, 2.5e-6, 1.1).n_sites == 0
    with pytest.raises(ValueError):
        mean_t_ent(site_layout(PROPS, 2.5e-6, 1.1))


def test_mean_t_ent_layout():
    lay = site_layout(PROPS, 2.5e-6, 0.9)
    assert mean_t_ent(lay) == pytest.approx(1.09e-6, rel=0.03)


def test_t_ent_scaling():
    one = np.zeros(1)
    at_max = ArrayLayout(one, one, np.array([K.G_MAX]), K.G_MAX, 1.0, 0.9)
    assert mean_t_ent(at_max) == pytest.approx(1.01e-6, rel=0.01)
    assert mean_t_ent(at_max) * K.GAMMA == pytest.approx(2.65, abs=0.01)
    low = ArrayLayout(one, one, np.array([0.9 * K.G_MAX]), K.G_MAX, 1.0, 0.9)
    assert site_t_ent(low)[0] == pytest.approx(mean_t_ent(at_max) / 0.9, rel=1e-12)


def test_rate_examples():
    assert bell_rate(SequenceParams(m=1)).rate == pytest.approx(7.8e4, rel=0.02)
    assert bell_rate(SequenceParams(m=5)).rate == pytest.approx(1.0e5, rel=0.03)
    assert bell_rate(SequenceParams(P_suc=0.0)).rate == 0.0


def test_rate_is_eq1():
    seq = SequenceParams(m=3)
    Ni = seq.N * (1 - seq.P_suc) ** np.arange(3)
    want = seq.P_suc * Ni.sum() / (seq.t_move + 3 * seq.t_init + Ni.sum() * seq.t_ent)
    assert bell_rate(seq).rate == pytest.approx(want, rel=1e-12)


def test_rate_plateau():
    r = [bell_rate(SequenceParams(m=m)).rate for m in range(5, 21)]
    assert (max(r) - min(r)) / min(r) < 0.03


@pytest.mark.parametrize("m", [1, 2, 5, 13])
def test_entangled_fraction(m):
    r = bell_rate(SequenceParams(m=m))
    assert r.entangled_fraction == pytest.approx(1 - (1 - 0.125) ** m, abs=1e-12)


def test_monte_carlo_rate():
    seq = SequenceParams(m=5)
    mc = bell_rate(seq, "monte_carlo", seed=1, samples=100_000)
    assert mc.rate == pytest.approx(bell_rate(seq).rate, rel=0.01)


def test_monte_carlo_needs_seed():
    with pytest.raises(ValueError):
        bell_rate(SequenceParams(), "monte_carlo")
    with pytest.raises(ValueError):
        nr_distribution(SequenceParams(), "monte_carlo")


def test_monte_carlo_thread_independent():
    seq = SequenceParams(m=3)
    a = bell_rate(seq, "monte_carlo", seed=5, samples=30_000, threads=1)
    b = bell_rate(seq, "monte_carlo", seed=5, samples=30_000, threads=4)
    assert a.rate == b.rate
    c = nr_distribution(seq, "monte_carlo", seed=5, samples=30_000, threads=1)
    d = nr_distribution(seq, "monte_carlo", seed=5, samples=30_000, threads=3)
    assert np.array_equal(c.values, d.values) and np.array_equal(c.probs, d.probs)


def test_nr_mean_m5():
    assert nr_distribution(SequenceParams(m=5)).mean == pytest.approx(250, rel=0.10)


def test_nr_monte_carlo_matches_analytic():
    seq = SequenceParams(m=5)
    a = nr_distribution(seq).mean
    mc = nr_distribution(seq, "monte_carlo", seed=3, samples=100_000).mean
    assert mc == pytest.approx(a, rel=0.01)


def test_nr_single_site():
    d = nr_distribution(SequenceParams(N=1, m=1))
    assert d.mean == 0 and np.all(d.values == 0)


def test_nr_single_round():
    seq = SequenceParams(N=204, m=1)
    exact = sum(204 - j for j in range(1, 205)) / 204
    assert exact == pytest.approx(101.5)
    assert nr_distribution(seq).mean == pytest.approx(exact, abs=1e-9)


def test_nr_nondecreasing_in_m():
    means = [nr_distribution(SequenceParams(m=m)).mean for m in range(1, 12)]
    assert np.all(np.diff(means) >= 0)


def test_sequence_errors():
    seq = SequenceParams(m=5)
    nr = nr_distribution(seq)
    ea1 = 3.5 / 2000**2
    se = sequence_error_inputs(seq, ea1, 3.0, nr)
    assert se.eps_a.mean == pytest.approx(nr.mean * ea1, rel=1e-12)
    assert se.eps_a.mean == pytest.approx(2.2e-4, rel=0.10)
    assert 1e-4 <= se.eps_m.mean <= 4e-4
    assert sequence_error_inputs(seq, ea1, math.inf, nr).eps_m.mean == 0.0


def test_schedule_small():
    ev = timing_schedule(SequenceParams(N=3, m=1))
    assert [e.kind for e in ev] == ["init", "excite", "excite", "excite", "move"]
    starts = [e.start for e in ev]
    assert all(b > a for a, b in zip(starts, starts[1:]))
    assert all(abs(a.stop - b.start) < 1e-18 for a, b in zip(ev, ev[1:]))


def test_schedule_duration():
    seq = SequenceParams(m=5)
    ev = timing_schedule(seq)
    assert ev[-1].stop == pytest.approx(sequence_duration(seq), rel=1e-12)
    assert ev[-1].stop == pytest.approx(996.6e-6, rel=1e-3)
    starts = [e.start for e in ev]
    assert all(b > a for a, b in zip(starts, starts[1:]))


def test_params_validation():
    with pytest.raises(ValueError):
        SequenceParams(N=0)
    with pytest.raises(ValueError):
        SequenceParams(P_suc=1.5)


@settings(max_examples=25, deadline=None)
@given(N=st.integers(1, 400), m=st.integers(1, 15), p=st.floats(0.01, 0.9))
def test_property_slots_and_fraction(N, m, p):
    seq = SequenceParams(N=N, m=m, P_suc=p)
    d = nr_distribution(seq)
    assert d.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(d.values >= 0)
    assert d.values.max() <= seq.attempts.sum()
    r = bell_rate(seq)
    assert r.entangled_fraction == pytest.approx(1 - (1 - p) ** m, abs=1e-12)
