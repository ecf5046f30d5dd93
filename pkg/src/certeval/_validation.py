"""Argument checks shared across modules."""

import numbers

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the domain of a closed-form bound."""


def check_delta(delta):
    if not isinstance(delta, numbers.Real) or not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta!r}")
    return float(delta)


def check_sample_size(n, name="n"):
    """Accept a positive integer or an array of positive integers."""
    arr = np.asarray(n)
    if arr.dtype.kind not in "iuf" or np.any(arr < 1) or np.any(arr != np.floor(arr)):
        raise DomainError(f"{name} must be a positive integer, got {n!r}")
    return arr.astype(np.float64)


def check_nonnegative(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise DomainError(f"{name} must be finite and nonnegative, got {x!r}")
    return arr


def check_positive(x, name):
    if not isinstance(x, numbers.Real) or not np.isfinite(x) or x <= 0:
        raise DomainError(f"{name} must be a positive real, got {x!r}")
    return float(x)


def check_losses(losses):
    """Return losses as a float array, raising if any falls outside [0, 1]."""
    arr = np.asarray(losses, dtype=np.float64)
    bad = ~((arr >= 0.0) & (arr <= 1.0))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ValueError(f"loss at position {i} is {arr.flat[i]!r}, outside [0, 1]")
    return arr


def as_scalar_or_array(arr):
    """Unwrap 0-d results to a plain float."""
    if np.ndim(arr) == 0:
        return float(arr)
    return arr
