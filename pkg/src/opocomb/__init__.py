"""Quantum-noise model of a multimode OPO frequency comb above threshold."""

__version__ = "0.1.0"

from .errors import (ConvergenceError, NumericalError, PoleError,  # noqa: E402
                     SingularSystemError, UnstableDynamicsError)
from .model import OpoParams, SteadyState, steady_state, threshold_pump  # noqa: E402

__all__ = [
    "__version__", "OpoParams", "SteadyState", "steady_state", "threshold_pump",
    "NumericalError", "PoleError", "SingularSystemError", "ConvergenceError",
    "UnstableDynamicsError",
]
