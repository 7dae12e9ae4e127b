"""Backend selection for the RK4 Lindblad stepper.

The compiled extension is used when it imports; set ``CAVNET_KERNEL=python``
to force the numpy fallback.
"""

import os

from . import _kernels_py as python_backend

try:
    if os.environ.get("CAVNET_KERNEL", "").lower() == "python":
        raise ImportError("forced python backend")
    from . import _kernels as compiled_backend
except ImportError:  # pragma: no cover - depends on build
    compiled_backend = None

BACKEND = "cython" if compiled_backend is not None else "python"
_impl = compiled_backend if compiled_backend is not None else python_backend


def rk4_propagate(rho, heff, jumps, h, nsteps, hermitian=True):
    return _impl.rk4_propagate(rho, heff, jumps, h, nsteps, hermitian)
