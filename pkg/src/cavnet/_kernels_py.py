"""Pure numpy RK4 stepper, used when the compiled kernel is unavailable."""

import numpy as np


def _rhs(x, heff, heff_dag, jumps, jumps_dag):
    out = -1j * (heff @ x - x @ heff_dag)
    if len(jumps):
        out += np.sum(jumps[None] @ x[:, None] @ jumps_dag[None], axis=1)
    return out


def rk4_propagate(rho, heff, jumps, h, nsteps, hermitian=True):
    """Advance a batch ``rho[n, d, d]`` in place by ``nsteps`` RK4 steps."""
    d = rho.shape[1]
    heff = np.asarray(heff, dtype=np.complex128)
    jumps = np.asarray(jumps, dtype=np.complex128).reshape(-1, d, d)
    heff_dag = heff.conj().T
    jumps_dag = np.conj(np.swapaxes(jumps, 1, 2))
    x = rho
    for _ in range(int(nsteps)):
        k1 = _rhs(x, heff, heff_dag, jumps, jumps_dag)
        k2 = _rhs(x + 0.5 * h * k1, heff, heff_dag, jumps, jumps_dag)
        k3 = _rhs(x + 0.5 * h * k2, heff, heff_dag, jumps, jumps_dag)
        k4 = _rhs(x + h * k3, heff, heff_dag, jumps, jumps_dag)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if hermitian:
            x = 0.5 * (x + np.conj(np.swapaxes(x, 1, 2)))
    rho[...] = x
    return rho
