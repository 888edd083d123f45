"""Input validation helpers used by the public functions and estimators."""

import math
import numbers

import numpy as np

from .exceptions import InvalidArgumentError


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not value > 0 or not math.isfinite(value):
        raise InvalidArgumentError(f"{name} must be a finite positive number, got {value!r}")
    return float(value)


def check_int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise InvalidArgumentError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise InvalidArgumentError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_in_range(value, name, low, high):
    if not isinstance(value, numbers.Real) or not (low <= value <= high):
        raise InvalidArgumentError(f"{name} must lie in [{low}, {high}], got {value!r}")
    return float(value)


def check_angle(theta, name="theta"):
    """Angles are radians measured from broadside."""
    return check_in_range(theta, name, -math.pi / 2, math.pi / 2)


def check_complex_1d(x, name, allow_empty=False):
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not allow_empty and arr.size == 0:
        raise InvalidArgumentError(f"{name} must be nonempty")
    arr = arr.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains NaN or Inf")
    return arr


def check_same_rate(signals, name="signals", rtol=1e-12):
    rates = {s.sample_rate for s in signals}
    first = next(iter(rates))
    if any(abs(r - first) > rtol * first for r in rates):
        raise InvalidArgumentError(f"{name} have mismatched sample rates: {sorted(rates)}")
    return first
