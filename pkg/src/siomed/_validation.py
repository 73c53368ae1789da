"""Input validation helpers."""
import numpy as np

from .exceptions import InvalidConfigError, SchemaError


def check_binary(values, name):
    vals = np.asarray(values, dtype=float)
    if not np.all(np.isin(vals, (0.0, 1.0))):
        raise SchemaError(f"{name} must take values in {{0, 1}}")
    return vals


def check_finite_columns(matrix, name):
    if not np.all(np.isfinite(matrix)):
        raise SchemaError(f"{name} contain non-finite values")


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
        raise InvalidConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_choice(value, choices, name):
    if value not in choices:
        raise InvalidConfigError(f"{name} must be one of {choices}, got {value!r}")
    return value


def check_dataset(data):
    from .data import Dataset

    if not isinstance(data, Dataset):
        raise TypeError(f"expected a Dataset, got {type(data).__name__}")
    return data
