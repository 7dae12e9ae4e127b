"""Dense open-system dynamics on small tensor-product Hilbert spaces.

Lindblad evolution uses fixed-step RK4 with global step halving (compiled
kernel when available), or exact segment propagators built from the
vectorized Liouvillian for stiff schedules. Two-time correlators follow the
quantum regression theorem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from . import kernels

STEP_FLOOR = 1e-12  # seconds


class DimensionError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class HilbertSpace:
    """Ordered product of labeled factors.

    A subspace created with :meth:`subspace` keeps a reference to its parent
    and the parent basis indices it spans.
    """

    factors: tuple
    parent: "HilbertSpace | None" = field(default=None, compare=False, repr=False)
    indices: tuple | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        facs = tuple((str(lab), int(dim)) for lab, dim in self.factors)
        if not facs:
            raise ValueError("a Hilbert space needs at least one factor")
        labels = [lab for lab, _ in facs]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate factor labels: {labels}")
        if any(dim < 1 for _, dim in facs):
            raise ValueError("factor dimensions must be positive")
        object.__setattr__(self, "factors", facs)

    @property
    def total_dim(self) -> int:
        return int(np.prod([dim for _, dim in self.factors]))

    @property
    def dims(self):
        return tuple(dim for _, dim in self.factors)

    @property
    def labels(self):
        return tuple(lab for lab, _ in self.factors)

    def concat(self, other: "HilbertSpace") -> "HilbertSpace":
        return HilbertSpace(self.factors + other.factors)

    def index(self, *local) -> int:
        """Flat basis index from one local index per factor."""
        return int(np.ravel_multi_index(tuple(local), self.dims))

    def subspace(self, indices) -> "HilbertSpace":
        idx = tuple(int(i) for i in indices)
        if len(set(idx)) != len(idx) or min(idx) < 0 or max(idx) >= self.total_dim:
            raise ValueError("invalid subspace indices")
        return HilbertSpace((("subspace", len(idx)),), parent=self, indices=idx)


def _as_matrix(entries, dim):
    m = np.array(entries, dtype=np.complex128)
    if m.shape != (dim, dim):
        raise DimensionError(f"expected a {dim}x{dim} matrix, got shape {m.shape}")
    m.setflags(write=False)
    return m


@dataclass(frozen=True, eq=False)
class Operator:
    space: HilbertSpace
    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _as_matrix(self.entries, self.space.total_dim))

    @classmethod
    def identity(cls, space):
        return cls(space, np.eye(space.total_dim))

    @classmethod
    def zeros(cls, space):
        return cls(space, np.zeros((space.total_dim,) * 2))

    @property
    def dim(self):
        return self.space.total_dim

    def dag(self):
        return Operator(self.space, self.entries.conj().T)

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T), initial=0.0))

    def _check(self, other):
        if other.space.total_dim != self.dim:
            raise DimensionError(f"dimension mismatch: {self.dim} vs {other.space.total_dim}")

    def __matmul__(self, other):
        self._check(other)
        return Operator(self.space, self.entries @ other.entries)

    def __add__(self, other):
        self._check(other)
        return Operator(self.space, self.entries + other.entries)

    def __sub__(self, other):
        self._check(other)
        return Operator(self.space, self.entries - other.entries)

    def __mul__(self, scalar):
        return Operator(self.space, self.entries * complex(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return Operator(self.space, -self.entries)

    def restrict(self, sub: HilbertSpace) -> "Operator":
        """Compress onto a subspace of this operator's space."""
        if sub.parent is None or sub.parent.total_dim != self.dim:
            raise DimensionError("subspace does not belong to this operator's space")
        ix = np.asarray(sub.indices)
        return Operator(sub, self.entries[np.ix_(ix, ix)])


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Density matrix, possibly an unnormalized conditioned branch."""

    space: HilbertSpace
    entries: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        object.__setattr__(self, "entries", _as_matrix(self.entries, self.space.total_dim))

    @classmethod
    def from_ket(cls, space, ket):
        v = np.asarray(ket, dtype=np.complex128).reshape(-1)
        v = v / np.linalg.norm(v)
        return cls(space, np.outer(v, v.conj()))

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def expect(self, op: Operator) -> complex:
        return complex(np.sum(op.entries.T * self.entries))

    def check(self, herm_tol=1e-10, trace_tol=1e-9, eig_tol=1e-9):
        """Raise NumericalError if the type invariants are violated."""
        m = self.entries
        herm = float(np.max(np.abs(m - m.conj().T)))
        if herm > herm_tol:
            raise NumericalError(f"density matrix not Hermitian (max deviation {herm:.3e})")
        if self.normalized:
            tr = abs(np.trace(m) - 1.0)
            if tr > trace_tol:
                raise NumericalError(f"trace deviates from 1 by {tr:.3e}")
            lam = float(np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min())
            if lam < -eig_tol:
                raise NumericalError(f"negative eigenvalue {lam:.3e}")
        return self

    def restrict(self, sub: HilbertSpace) -> "DensityMatrix":
        ix = np.asarray(sub.indices)
        return DensityMatrix(sub, self.entries[np.ix_(ix, ix)], self.normalized)


def tensor_product(a: Operator, b: Operator) -> Operator:
    return Operator(a.space.concat(b.space), np.kron(a.entries, b.entries))


def embed(local, space: HilbertSpace, label: str) -> Operator:
    """Lift a matrix acting on one factor to the full product space."""
    mats = []
    for lab, dim in space.factors:
        mats.append(np.asarray(local) if lab == label else np.eye(dim))
    if label not in space.labels:
        raise KeyError(label)
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return Operator(space, out)


def _check_ops(dim, h, jumps):
    if h.dim != dim:
        raise DimensionError(f"Hamiltonian has dimension {h.dim}, state has {dim}")
    for k, c in enumerate(jumps):
        if c.dim != dim:
            raise DimensionError(f"jump operator #{k} has dimension {c.dim}, state has {dim}")


def lindblad_rhs(rho, h: Operator, jumps: Sequence[Operator]) -> np.ndarray:
    """Right-hand side of the Lindblad equation for ``rho`` (matrix or DensityMatrix)."""
    r = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=np.complex128)
    _check_ops(r.shape[0], h, jumps)
    H = h.entries
    out = -1j * (H @ r - r @ H)
    for c in jumps:
        C = c.entries
        cd = C.conj().T
        cdc = cd @ C
        out += C @ r @ cd - 0.5 * (cdc @ r + r @ cdc)
    return out


def liouvillian(h: Operator, jumps: Sequence[Operator]) -> np.ndarray:
    """Superoperator matrix acting on row-major vec(rho)."""
    d = h.dim
    _check_ops(d, h, jumps)
    eye = np.eye(d)
    H = h.entries
    L = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
    for c in jumps:
        C = c.entries
        cdc = C.conj().T @ C
        L += np.kron(C, C.conj()) - 0.5 * np.kron(cdc, eye) - 0.5 * np.kron(eye, cdc.T)
    return L


def effective_hamiltonian(h: Operator, jumps: Sequence[Operator]) -> np.ndarray:
    heff = np.array(h.entries)
    for c in jumps:
        heff -= 0.5j * (c.entries.conj().T @ c.entries)
    return heff


@dataclass(frozen=True, eq=False)
class EvolutionSpec:
    """Piecewise-constant Lindblad schedule on a uniform grid.

    ``hamiltonians[k]`` applies from ``switch_times[k-1]`` (or ``start``) up to
    ``switch_times[k]`` (or ``stop``). Switch times must sit on grid points.
    """

    hamiltonians: tuple
    switch_times: tuple
    jumps: tuple
    start: float
    stop: float
    step: float
    tol: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "hamiltonians", tuple(self.hamiltonians))
        object.__setattr__(self, "switch_times", tuple(float(t) for t in self.switch_times))
        object.__setattr__(self, "jumps", tuple(self.jumps))
        if len(self.hamiltonians) != len(self.switch_times) + 1:
            raise ValueError("need exactly one more Hamiltonian than switch times")
        if not self.step > 0 or not self.stop > self.start:
            raise ValueError("grid needs step > 0 and stop > start")
        n = (self.stop - self.start) / self.step
        if abs(n - round(n)) > 1e-6:
            raise ValueError("(stop - start) must be an integer number of steps")
        d = self.hamiltonians[0].dim
        for h in self.hamiltonians:
            _check_ops(d, h, self.jumps)
        prev = self.start
        for t in self.switch_times:
            if not (self.start <= t <= self.stop) or t < prev:
                raise ValueError(f"switch time {t} outside [start, stop] or unsorted")
            k = (t - self.start) / self.step
            if abs(k - round(k)) > 1e-6:
                raise ValueError(f"switch time {t} is not on a grid point")
            prev = t

    @property
    def dim(self):
        return self.hamiltonians[0].dim

    @property
    def n_intervals(self) -> int:
        return int(round((self.stop - self.start) / self.step))

    @property
    def grid(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.n_intervals + 1)

    def segment_of_interval(self, k: int) -> int:
        """Index of the Hamiltonian active on grid interval [t_k, t_k+1]."""
        kk = [int(round((t - self.start) / self.step)) for t in self.switch_times]
        return int(np.searchsorted(kk, k, side="right"))

    def index_of(self, t: float) -> int:
        k = (t - self.start) / self.step
        if abs(k - round(k)) > 1e-6 or not (-1e-9 <= k <= self.n_intervals + 1e-6):
            raise ValueError(f"time {t} is not a grid point")
        return int(round(k))

    def generator_bound(self) -> float:
        """Upper bound on the Liouvillian norm, used to seed the RK4 step."""
        jn = sum(np.linalg.norm(c.entries, 2) ** 2 for c in self.jumps)
        hn = max(np.linalg.norm(h.entries, 2) for h in self.hamiltonians)
        return 2.0 * hn + 2.0 * jn


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_t, d, d)
    space: HilbertSpace
    substeps: int = 1
    method: str = "rk4"

    def expect(self, op) -> np.ndarray:
        m = op.entries if isinstance(op, Operator) else np.asarray(op)
        return np.einsum("ij,tji->t", m, self.states)

    def trace_error(self) -> float:
        return float(np.max(np.abs(np.einsum("tii->t", self.states) - 1.0)))

    def state(self, k) -> DensityMatrix:
        return DensityMatrix(self.space, self.states[k])


class Propagator:
    """Interval-by-interval propagation of batches of matrices under a spec."""

    def __init__(self, spec: EvolutionSpec, method="rk4", substeps=1):
        if method not in ("rk4", "expm"):
            raise ValueError(f"unknown method {method!r}")
        self.spec = spec
        self.method = method
        self.substeps = int(substeps)
        self._heff = [effective_hamiltonian(h, spec.jumps) for h in spec.hamiltonians]
        self._jumps = np.array([c.entries for c in spec.jumps]).reshape(-1, spec.dim, spec.dim)
        self._seg = [spec.segment_of_interval(k) for k in range(spec.n_intervals)]
        self._expm = {}
        if method == "rk4" and spec.step / self.substeps < STEP_FLOOR:
            raise NumericalError(
                f"RK4 step {spec.step / self.substeps:.3e} s below the {STEP_FLOOR:.0e} s floor"
            )

    def _prop_matrix(self, seg):
        if seg not in self._expm:
            L = liouvillian(self.spec.hamiltonians[seg], self.spec.jumps)
            self._expm[seg] = expm(L * self.spec.step).T.copy()
        return self._expm[seg]

    def advance(self, batch: np.ndarray, k: int, hermitian=True) -> np.ndarray:
        """Propagate ``batch[n, d, d]`` across grid interval k (in place when possible)."""
        seg = self._seg[k]
        if self.method == "expm":
            n, d, _ = batch.shape
            out = (batch.reshape(n, d * d) @ self._prop_matrix(seg)).reshape(n, d, d)
            if hermitian:
                out = 0.5 * (out + np.conj(np.swapaxes(out, 1, 2)))
            batch[...] = out
            return batch
        kernels.rk4_propagate(batch, self._heff[seg], self._jumps,
                              self.spec.step / self.substeps, self.substeps, hermitian)
        return batch


def _run(rho, spec, method, substeps, hermitian):
    prop = Propagator(spec, method, substeps)
    d = spec.dim
    cur = np.ascontiguousarray(np.array(rho, dtype=np.complex128).reshape(1, d, d))
    out = np.empty((spec.n_intervals + 1, d, d), dtype=np.complex128)
    out[0] = cur[0]
    for k in range(spec.n_intervals):
        prop.advance(cur, k, hermitian)
        out[k + 1] = cur[0]
    return out


def initial_substeps(spec: EvolutionSpec, target=0.5) -> int:
    return max(1, int(math.ceil(spec.step * spec.generator_bound() / target)))


def evolve(rho0, spec: EvolutionSpec, method="rk4", substeps=None, max_halvings=16) -> Trajectory:
    """Evolve ``rho0`` over the spec grid.

    With ``method="rk4"`` the substep count is doubled until the largest
    change of any density-matrix entry on the grid drops below ``spec.tol``.
    ``method="expm"`` uses exact segment propagators. Unnormalized and
    non-Hermitian inputs are propagated linearly without symmetrization.
    """
    if isinstance(rho0, DensityMatrix):
        r0, normalized, space = rho0.entries, rho0.normalized, rho0.space
    else:
        r0, normalized = np.asarray(rho0, dtype=np.complex128), False
        space = spec.hamiltonians[0].space
    if r0.shape != (spec.dim, spec.dim):
        raise DimensionError(f"state dimension {r0.shape} does not match spec dimension {spec.dim}")
    hermitian = bool(np.max(np.abs(r0 - r0.conj().T), initial=0.0) < 1e-12)
    if method == "expm":
        states = _run(r0, spec, "expm", 1, hermitian)
        n = 1
    elif substeps is not None:
        states = _run(r0, spec, "rk4", substeps, hermitian)
        n = int(substeps)
    else:
        n = initial_substeps(spec)
        states = _run(r0, spec, "rk4", n, hermitian)
        for _ in range(max_halvings):
            finer = _run(r0, spec, "rk4", 2 * n, hermitian)
            change = float(np.max(np.abs(finer - states)))
            n, states = 2 * n, finer
            if change < spec.tol:
                break
        else:
            raise NumericalError(f"RK4 did not converge to tol {spec.tol:g} after {max_halvings} halvings")
    traj = Trajectory(spec.grid, states, space, n, method)
    if normalized and traj.trace_error() > 1e-9:
        raise NumericalError(f"trace drift {traj.trace_error():.3e} exceeds 1e-9")
    return traj


def _op(m):
    return m.entries if isinstance(m, Operator) else np.asarray(m, dtype=np.complex128)


def regression_table(traj: Trajectory, spec: EvolutionSpec, seeds_at_t1, observables,
                     method="rk4", t1_index=None):
    """Core quantum-regression sweep.

    ``seeds_at_t1(rho_t1)`` returns an ``(s, d, d)`` stack of seed matrices built
    from the state at t1 (for example ``a rho a^dag``). Each seed is propagated
    to every later grid point and ``Tr[B rho]`` is taken for each observable B.
    Returns an array ``(n_t1, n_t, s, n_obs)`` with NaN where t2 < t1.
    """
    nt = len(traj.times)
    t1_index = np.arange(nt) if t1_index is None else np.asarray(t1_index)
    obs = np.array([_op(b) for b in observables])  # (o, d, d)
    obsT = np.ascontiguousarray(np.swapaxes(obs, 1, 2))
    d = spec.dim
    prop = Propagator(spec, method, traj.substeps)
    first = seeds_at_t1(traj.states[0])
    ns = first.shape[0]
    out = np.full((len(t1_index), nt, ns, len(obs)), np.nan + 0j)
    # all seeds alive at interval k are advanced together
    active = np.empty((0, d, d), dtype=np.complex128)
    owner = []
    start_of = {int(k): i for i, k in enumerate(t1_index)}
    for k in range(nt):
        if k in start_of:
            seeds = np.asarray(seeds_at_t1(traj.states[k]), dtype=np.complex128)
            active = np.concatenate([active, seeds], axis=0)
            owner.append(start_of[k])
        if len(owner):
            vals = np.einsum("oij,nij->no", obsT, active).reshape(len(owner), ns, len(obs))
            out[owner, k] = vals
        if k < nt - 1 and len(owner):
            active = np.ascontiguousarray(active)
            prop.advance(active, k, hermitian=False)
    return out


def two_time_correlator(rho0, spec: EvolutionSpec, jump_at_t1, observable_at_t2, t1_grid, t2_grid,
                        right=None, method="rk4", traj: Trajectory | None = None):
    """Map of Tr[B U(t2<-t1)(A rho(t1) R^dag)] with R defaulting to A.

    Entries with t2 < t1 are NaN. Use :func:`correlator` for single points.
    """
    if traj is None:
        traj = evolve(rho0, spec, method=method)
    A = _op(jump_at_t1)
    R = A if right is None else _op(right)
    Rd = R.conj().T
    k1 = [spec.index_of(t) for t in np.atleast_1d(t1_grid)]
    k2 = [spec.index_of(t) for t in np.atleast_1d(t2_grid)]
    tab = regression_table(traj, spec, lambda r: (A @ r @ Rd)[None], [observable_at_t2],
                           method=method, t1_index=sorted(set(k1)))
    rowpos = {k: i for i, k in enumerate(sorted(set(k1)))}
    res = np.full((len(k1), len(k2)), np.nan + 0j)
    for i, a in enumerate(k1):
        for j, b in enumerate(k2):
            if b >= a:
                res[i, j] = tab[rowpos[a], b, 0, 0]
    return res


def correlator(rho0, spec, jump_at_t1, observable_at_t2, t1, t2, right=None, method="rk4"):
    if t2 < t1:
        raise ValueError(f"t2 = {t2} precedes t1 = {t1}; two-time correlators need t2 >= t1")
    return complex(two_time_correlator(rho0, spec, jump_at_t1, observable_at_t2, [t1], [t2],
                                       right=right, method=method)[0, 0])


def reachable_subspace(space: HilbertSpace, operators, seed_indices) -> HilbertSpace:
    """Smallest coordinate subspace containing the seeds and closed under the operators."""
    mats = [np.abs(_op(o)) > 0 for o in operators]
    seen = set(int(i) for i in seed_indices)
    stack = list(seen)
    while stack:
        i = stack.pop()
        for m in mats:
            for j in np.nonzero(m[:, i])[0]:
                if int(j) not in seen:
                    seen.add(int(j))
                    stack.append(int(j))
    return space.subspace(sorted(seen))
