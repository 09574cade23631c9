"""Small input checks shared by the modules."""

import numpy as np

from .exceptions import ConfigurationError, DomainError


def as_probabilities(values, name="probabilities", *, allow_one=True):
    """Return `values` as a 1-D float array after checking every entry is a probability.

    Zero and negative entries are always rejected; 1 is accepted unless
    ``allow_one`` is False.
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    if np.any(arr <= 0.0):
        raise DomainError(f"{name} must be strictly positive")
    if allow_one:
        if np.any(arr > 1.0):
            raise DomainError(f"{name} must not exceed 1")
    elif np.any(arr >= 1.0):
        raise DomainError(f"{name} must be strictly below 1")
    return arr


def check_nonempty(arr, name):
    if np.size(arr) == 0:
        raise DomainError(f"{name} is empty")


def check_fraction(value, name, low=0.0, high=1.0, *, include_high=True):
    value = float(value)
    ok = low < value <= high if include_high else low < value < high
    if not ok:
        bracket = "]" if include_high else ")"
        raise ConfigurationError(f"{name}={value} outside ({low}, {high}{bracket}")
    return value


def check_choice(value, name, choices):
    if value not in choices:
        raise ConfigurationError(f"{name}={value!r}; expected one of {sorted(choices)}")
    return value
