"""
Validation utility functions for inputs and numeric results.

Provides helpers for parsing CLI lists and checking radius sequences and
probability vectors.
"""

from typing import Any, List, Sequence

import numpy as np


def is_empty_or_none(value: Any) -> bool:
    """
    Check if value is None or empty.

    Examples:
        >>> is_empty_or_none(None)
        True
        >>> is_empty_or_none([])
        True
        >>> is_empty_or_none("1,2")
        False
    """
    if value is None:
        return True
    if isinstance(value, str) and value.strip() == '':
        return True
    if isinstance(value, (list, dict, tuple, set)) and len(value) == 0:
        return True
    return False


def parse_int_list(text: str) -> List[int]:
    """
    Parse a comma-separated integer list such as ``"5,10,20"``.

    Raises:
        ValueError: If an item is not an integer
    """
    if is_empty_or_none(text):
        return []
    return [int(part.strip()) for part in text.split(',') if part.strip()]


def is_strictly_increasing(values: Sequence[float]) -> bool:
    return all(b > a for a, b in zip(values, values[1:]))


def is_probability_vector(weights: Sequence[float], tol: float = 1e-10) -> bool:
    """
    True when weights are nonnegative (within tol) and sum to one (within tol).

    Examples:
        >>> is_probability_vector([0.5, 0.5])
        True
        >>> is_probability_vector([1.2, -0.2])
        False
    """
    arr = np.asarray(weights, dtype=float)
    if arr.size == 0:
        return False
    return bool(arr.min() >= -tol and abs(arr.sum() - 1.0) <= tol)
