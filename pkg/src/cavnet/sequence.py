"""Multiplexed entanglement sequence: array layout, Bell-pair rate, and the
distribution of attempts a finished pair has to sit through."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import constants as K
from .cavity import ModeProperties, mode_profile
from .heralding import ErrorDistribution
from .spinphoton import cavity_zero_time

MC_CHUNK = 10_000  # samples per random stream; fixed so results do not depend on threading


@dataclass(frozen=True, eq=False)
class ArrayLayout:
    x: np.ndarray
    z: np.ndarray
    g: np.ndarray
    g_max: float
    spacing: float
    threshold: float

    @property
    def n_sites(self) -> int:
        return len(self.g)


def site_layout(props: ModeProperties = ModeProperties(), spacing=K.SPACING, threshold=K.THRESHOLD,
                g_max=K.G_MAX) -> ArrayLayout:
    """Square grid in the x-z plane, registered with a site on the mode centre.

    Keeps sites with g(x, 0, z) >= threshold * g_max. Sites are ordered by
    z then x, which is also the excitation order.
    """
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    if threshold > 1:
        empty = np.zeros(0)
        return ArrayLayout(empty, empty, empty, g_max, spacing, threshold)
    thr = max(threshold, 1e-300)
    x_edge = props.w0 * math.sqrt(math.log(1 / thr))
    z_edge = props.z_R * math.sqrt(thr**-2 - 1)
    nx = int(x_edge // spacing) + 1
    nz = int(min(z_edge, 1e9 * spacing) // spacing) + 1
    ix = np.arange(-nx, nx + 1)
    iz = np.arange(-nz, nz + 1)
    Z, X = np.meshgrid(iz * spacing, ix * spacing, indexing="ij")
    f = mode_profile(props, X, 0.0, Z)
    keep = f >= threshold * (1 - 1e-12)
    return ArrayLayout(X[keep], Z[keep], g_max * f[keep], g_max, spacing, threshold)


def site_t_ent(layout: ArrayLayout, kappa=K.KAPPA, Gamma=K.GAMMA) -> np.ndarray:
    """Per-site attempt time: the shift time at g_max scaled by g_max/g_i."""
    t_ref = cavity_zero_time(layout.g_max, kappa, Gamma)
    return t_ref * layout.g_max / layout.g


def mean_t_ent(layout: ArrayLayout, kappa=K.KAPPA, Gamma=K.GAMMA) -> float:
    if layout.n_sites == 0:
        raise ValueError("empty layout")
    return float(site_t_ent(layout, kappa, Gamma).mean())


@dataclass(frozen=True)
class SequenceParams:
    N: int = K.N_SITES
    m: int = 5
    t_move: float = K.T_MOVE
    t_init: float = K.T_INIT
    P_suc: float = K.P_SUC
    t_ent: float = K.T_ENT_MEAN

    def __post_init__(self):
        if self.N < 1 or self.m < 1:
            raise ValueError("N and m must be at least 1")
        if not 0 <= self.P_suc <= 1:
            raise ValueError("P_suc must lie in [0, 1]")

    def replace(self, **kw):
        from dataclasses import replace as _r

        return _r(self, **kw)

    @property
    def attempts(self) -> np.ndarray:
        """Fractional attempts per round, N_i = N (1 - P_suc)^(i-1)."""
        return self.N * (1 - self.P_suc) ** np.arange(self.m)


@dataclass(frozen=True, eq=False)
class RoundStats:
    attempts: np.ndarray
    successes: np.ndarray
    entangled_fraction: np.ndarray
    elapsed: np.ndarray


@dataclass(frozen=True)
class RateResult:
    rate: float
    entangled_fraction: float
    rounds: RoundStats
    duration: float
    std_error: float = 0.0


def sequence_duration(seq: SequenceParams) -> float:
    return seq.t_move + seq.m * seq.t_init + seq.attempts.sum() * seq.t_ent


def _round_stats(seq: SequenceParams) -> RoundStats:
    Ni = seq.attempts
    succ = Ni * seq.P_suc
    frac = 1 - (1 - seq.P_suc) ** np.arange(1, seq.m + 1)
    elapsed = np.cumsum(seq.t_init + Ni * seq.t_ent)
    return RoundStats(Ni, succ, frac, elapsed)


def _streams(seed, samples):
    n_chunks = -(-samples // MC_CHUNK)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    sizes = [MC_CHUNK] * (n_chunks - 1) + [samples - MC_CHUNK * (n_chunks - 1)]
    return [(np.random.Generator(np.random.Philox(c)), s) for c, s in zip(children, sizes)]


def _map_chunks(fn, seed, samples, threads):
    jobs = _streams(seed, samples)
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(lambda a: fn(*a), jobs))
    return [fn(*a) for a in jobs]


def _success_rounds(rng, seq: SequenceParams, size):
    """Round in which each site succeeds (m + 1 if never), shape (size, N)."""
    if seq.P_suc == 0:
        return np.full((size, seq.N), seq.m + 1)
    r = rng.geometric(seq.P_suc, size=(size, seq.N)) if seq.P_suc < 1 else np.ones((size, seq.N), int)
    return np.minimum(r, seq.m + 1)


def _simulate(rng, size, seq: SequenceParams):
    r = _success_rounds(rng, seq, size)
    attempts = np.stack([(r >= k).sum(axis=1) for k in range(1, seq.m + 1)], axis=1)
    succ = (r <= seq.m).sum(axis=1)
    return r, attempts, succ


def bell_rate(seq: SequenceParams, mode="analytic", seed=None, samples=100_000, threads=None) -> RateResult:
    """Average Bell-pair rate over m rounds.

    analytic: the mean-field expression with fractional N_i.
    monte_carlo: integer attempts, rate = total pairs / total time over all
    sampled sequences.
    """
    stats = _round_stats(seq)
    if mode == "analytic":
        dur = sequence_duration(seq)
        return RateResult(float(stats.successes.sum() / dur), float(stats.entangled_fraction[-1]), stats, dur)
    if mode != "monte_carlo":
        raise ValueError(f"unknown mode {mode!r}")
    if seed is None:
        raise ValueError("Monte Carlo mode requires a seed")

    def chunk(rng, size):
        _, att, succ = _simulate(rng, size, seq)
        dur = seq.t_move + seq.m * seq.t_init + att.sum(axis=1) * seq.t_ent
        return succ.astype(float), dur

    parts = _map_chunks(chunk, seed, samples, threads)
    s = np.concatenate([p[0] for p in parts])
    d = np.concatenate([p[1] for p in parts])
    rate = s.sum() / d.sum()
    # delta-method standard error of the ratio estimator
    resid = s - rate * d
    se = float(np.std(resid, ddof=1) / (d.mean() * math.sqrt(len(s)))) if len(s) > 1 else 0.0
    return RateResult(float(rate), float(s.sum() / (seq.N * len(s))), stats, float(d.mean()), se)


@dataclass(frozen=True, eq=False)
class NrDistribution:
    values: np.ndarray
    probs: np.ndarray
    rounds: np.ndarray  # round index (1-based) that produced each value; empty for Monte Carlo

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))


def _slots(seq: SequenceParams):
    """(round, attempts-after, weight) for every excitation slot, fractional last slot included."""
    Ni = seq.attempts
    after = np.concatenate([np.cumsum(Ni[::-1])[::-1][1:], [0.0]])
    rows = []
    for i, n in enumerate(Ni):
        full = int(math.floor(n + 1e-12))
        j = np.arange(1, full + 1, dtype=float)
        w = np.ones(full)
        if n - full > 1e-12:
            j = np.append(j, full + 1.0)
            w = np.append(w, n - full)
        # remaining attempts in this round after slot j, clipped for the partial slot
        rem = np.maximum(n - j, 0.0)
        rows.append((np.full(len(j), i + 1), rem + after[i], w))
    rnd = np.concatenate([r[0] for r in rows])
    val = np.concatenate([r[1] for r in rows])
    wt = np.concatenate([r[2] for r in rows])
    return rnd, val, wt


def nr_distribution(seq: SequenceParams, mode="analytic", seed=None, samples=100_000, threads=None) -> NrDistribution:
    """Distribution of N_r, the attempts that follow a pair's creation until the end of round m."""
    if mode == "analytic":
        rnd, val, wt = _slots(seq)
        if seq.P_suc == 0:
            return NrDistribution(np.array([0.0]), np.array([1.0]), np.array([1]))
        return NrDistribution(val, wt / wt.sum(), rnd)
    if mode != "monte_carlo":
        raise ValueError(f"unknown mode {mode!r}")
    if seed is None:
        raise ValueError("Monte Carlo mode requires a seed")

    def chunk(rng, size):
        r, att, _ = _simulate(rng, size, seq)
        after = np.concatenate([np.cumsum(att[:, ::-1], axis=1)[:, ::-1][:, 1:], np.zeros((size, 1), int)], axis=1)
        out = []
        for k in range(1, seq.m + 1):
            alive = r >= k
            pos = np.cumsum(alive, axis=1)
            hit = r == k
            nr = att[:, k - 1][:, None] - pos + after[:, k - 1][:, None]
            out.append(nr[hit])
        return np.concatenate(out) if out else np.zeros(0, int)

    vals = np.concatenate(_map_chunks(chunk, seed, samples, threads))
    if len(vals) == 0:
        return NrDistribution(np.array([0.0]), np.array([1.0]), np.zeros(0, int))
    u, c = np.unique(vals, return_counts=True)
    return NrDistribution(u.astype(float), c / c.sum(), np.zeros(0, int))


@dataclass(frozen=True, eq=False)
class SequenceErrors:
    eps_a: ErrorDistribution
    eps_m: ErrorDistribution


def sequence_error_inputs(seq: SequenceParams, eps_a_per_attempt, tau_metastable=K.TAU_3P0,
                          nr: NrDistribution | None = None) -> SequenceErrors:
    """Per-pair spectator and metastable-decay errors.

    eps_a = N_r * eps_a1. eps_m = 1 - exp(-2 t_wait / tau), where t_wait
    counts the remaining attempts plus the init periods of later rounds.
    """
    nr = nr_distribution(seq) if nr is None else nr
    ea = nr.values * eps_a_per_attempt
    if len(nr.rounds):
        later = seq.m - nr.rounds
    else:
        later = np.zeros_like(nr.values)
    t_wait = nr.values * seq.t_ent + later * seq.t_init
    em = np.zeros_like(t_wait) if math.isinf(tau_metastable) else -np.expm1(-2 * t_wait / tau_metastable)
    return SequenceErrors(ErrorDistribution.from_samples(ea, nr.probs), ErrorDistribution.from_samples(em, nr.probs))


@dataclass(frozen=True)
class Event:
    kind: str
    start: float
    duration: float
    round: int
    site: int = -1

    @property
    def stop(self):
        return self.start + self.duration


def timing_schedule(seq: SequenceParams) -> list:
    """Ordered events of one array: per round an init/repump, then N_i
    excitation slots (shift on at the end of each), then one move."""
    events = []
    t = 0.0
    for i, n in enumerate(seq.attempts):
        events.append(Event("init" if i == 0 else "repump", t, seq.t_init, i + 1))
        t += seq.t_init
        full = int(math.floor(n + 1e-12))
        durs = [seq.t_ent] * full
        if n - full > 1e-12:
            durs.append((n - full) * seq.t_ent)
        for j, d in enumerate(durs):
            events.append(Event("excite", t, d, i + 1, j))
            t += d
    events.append(Event("move", t, seq.t_move, seq.m))
    return events
