"""Input validation helpers used by the public functions and estimators."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .exceptions import DomainError


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        raise DomainError(f"{name} must be a positive finite number, got {value!r}")
    return value


def check_nonnegative(value: float, name: str) -> float:
    value = float(value)
    if not math.isfinite(value) or value < 0:
        raise DomainError(f"{name} must be a non-negative finite number, got {value!r}")
    return value


def check_probability(value: float, name: str = "epsilon") -> float:
    """Accept a probability in [0, 1); the upper end is excluded on purpose."""
    value = float(value)
    if not (0.0 <= value < 1.0):
        raise DomainError(f"{name} must lie in [0, 1), got {value!r}")
    return value


def check_vector(
    values: Iterable[float],
    name: str,
    *,
    nonnegative: bool = True,
    allow_empty: bool = False,
) -> np.ndarray:
    """Return ``values`` as a 1-D float array after shape and sign checks."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DomainError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0 and not allow_empty:
        raise DomainError(f"{name} must not be empty")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    if nonnegative and np.any(arr < 0):
        raise DomainError(f"{name} must be non-negative")
    return arr
