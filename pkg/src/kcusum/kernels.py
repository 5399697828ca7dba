"""Kernel functions on Euclidean observations.

Observations are 1-D ``float64`` numpy arrays. Every kernel is evaluated
through :func:`paired_kernel`, which works on stacked pairs of shape
``(..., dim)``; the scalar entry point :func:`kernel_eval` is a one-row call
of the same code, so scalar and batched results agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from kcusum.errors import ConfigError, InputError

ArrayLike = Union[Sequence[float], np.ndarray]

GAUSSIAN = "gaussian"


def as_observation(values: ArrayLike, dim: int | None = None) -> np.ndarray:
    """Validate ``values`` as a single observation and return it as an array.

    Raises:
        InputError: if the input is not a non-empty 1-D vector of finite
            numbers, or its length differs from ``dim`` when given.
    """
    try:
        arr = np.asarray(values, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InputError(f"observation is not numeric: {values!r}") from exc
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise InputError(f"observation must be a non-empty vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise InputError(f"dimension mismatch: expected {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InputError("observation contains NaN or infinite values")
    return arr


def squared_distance(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row-wise squared Euclidean distance, summed left to right over coordinates."""
    diff = x - y
    acc = diff[..., 0] * diff[..., 0]
    for j in range(1, diff.shape[-1]):
        acc = acc + diff[..., j] * diff[..., j]
    return acc


def _gaussian_pairs(spec: KernelSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.exp(-squared_distance(x, y) / (2.0 * spec.sigma2))


_FAMILIES: dict[str, Callable[["KernelSpec", np.ndarray, np.ndarray], np.ndarray]] = {
    GAUSSIAN: _gaussian_pairs,
}


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus the metadata the bounds need.

    ``sup_bound`` is the sup-norm of the kernel and ``nonnegative`` records
    whether ``k >= 0`` everywhere. For the Gaussian family both are fixed
    (1 and True).
    """

    family: str = GAUSSIAN
    sigma2: float = 1.0
    sup_bound: float = 1.0
    nonnegative: bool = True

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}")
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise ConfigError(f"sigma2 must be positive and finite, got {self.sigma2}")
        if not self.sup_bound > 0:
            raise ConfigError(f"sup_bound must be positive, got {self.sup_bound}")
        if self.family == GAUSSIAN and (self.sup_bound != 1.0 or not self.nonnegative):
            raise ConfigError("the Gaussian kernel has sup_bound = 1 and is nonnegative")


def gaussian(sigma2: float = 1.0) -> KernelSpec:
    """Gaussian kernel ``exp(-||x - y||^2 / (2 sigma2))``."""
    return KernelSpec(GAUSSIAN, float(sigma2), 1.0, True)


def register_family(
    name: str, fn: Callable[[KernelSpec, np.ndarray, np.ndarray], np.ndarray]
) -> None:
    """Register a new kernel family evaluated row-wise on ``(..., dim)`` arrays."""
    _FAMILIES[name] = fn


def paired_kernel(spec: KernelSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Evaluate ``k(x[i], y[i])`` for stacked observation pairs.

    No validation is done here; this is the hot path used by the detectors
    and the simulation harness.
    """
    return _FAMILIES[spec.family](spec, x, y)


def kernel_eval(spec: KernelSpec, x: ArrayLike, y: ArrayLike) -> float:
    """Evaluate the kernel on a single pair of observations.

    Raises:
        InputError: on dimension mismatch or non-finite coordinates.
    """
    xa = as_observation(x)
    ya = as_observation(y, dim=xa.shape[0])
    return float(paired_kernel(spec, xa[None, :], ya[None, :])[0])
