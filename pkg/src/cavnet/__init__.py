"""Two-module cavity entanglement simulator: atom-cavity dynamics, heralded
Bell pairs, sequence rates and error budgets."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402,F401
