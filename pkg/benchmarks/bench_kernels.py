"""Compare the compiled and numpy RK4 Lindblad kernels on module-sized problems.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from cavnet import kernels
from cavnet.qdyn import effective_hamiltonian
from cavnet.spinphoton import ModuleModel, ModuleParams


def problem(reduce):
    model = ModuleModel(ModuleParams(), reduce=reduce)
    H = model._H[0.0]
    heff = effective_hamiltonian(H, model.jumps)
    jumps = np.array([c.entries for c in model.jumps])
    return model.dim, heff, jumps


def bench(backend, rho, heff, jumps, h, nsteps, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        x = rho.copy()
        t0 = time.perf_counter()
        backend.rk4_propagate(x, heff, jumps, h, nsteps, True)
        best = min(best, time.perf_counter() - t0)
        out = x
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=200)
    args = ap.parse_args()
    if kernels.compiled_backend is None:
        print("compiled kernel not built; only the numpy backend is available")
        return
    h = 1e-9
    print(f"{'dim':>4} {'batch':>5} {'cython us/step':>15} {'numpy us/step':>14} {'speedup':>8} {'max diff':>9}")
    for reduce in (True, False):
        d, heff, jumps = problem(reduce)
        for batch in (1, 16, 64):
            rng = np.random.default_rng(0)
            v = rng.normal(size=(batch, d, d)) + 1j * rng.normal(size=(batch, d, d))
            rho = np.ascontiguousarray(v @ np.conj(np.swapaxes(v, 1, 2)))
            rho /= np.trace(rho, axis1=1, axis2=2)[:, None, None]
            tc, xc = bench(kernels.compiled_backend, rho, heff, jumps, h, args.steps, args.repeat)
            tp, xp = bench(kernels.python_backend, rho, heff, jumps, h, args.steps, args.repeat)
            diff = float(np.max(np.abs(xc - xp)))
            print(f"{d:>4} {batch:>5} {tc / args.steps * 1e6:>15.2f} {tp / args.steps * 1e6:>14.2f} "
                  f"{tp / tc:>8.1f} {diff:>9.1e}")


if __name__ == "__main__":
    main()
