"""Streaming change detection with CUSUM and kernel CUSUM (KCUSUM).

The package contains the detectors, the MMD block statistics they are built
from, closed-form performance bounds, and a seeded Monte Carlo harness for
estimating run lengths.
"""

from kcusum.errors import (
    ConfigError,
    DataError,
    InputError,
    UndetectableChangeError,
    UsageError,
)
from kcusum.kernels import GAUSSIAN, KernelSpec, as_observation, gaussian, kernel_eval

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "GAUSSIAN",
    "InputError",
    "KernelSpec",
    "UndetectableChangeError",
    "UsageError",
    "as_observation",
    "gaussian",
    "kernel_eval",
    "__version__",
]
