"""
Math utility functions for numerical checks.

Small measure and statistics helpers shared by the solver and Monte Carlo modules.
"""

import math
from typing import Dict, Hashable, Iterable, Mapping, Optional, Tuple

import numpy as np


def total_variation(p: Mapping[Hashable, float], q: Mapping[Hashable, float]) -> float:
    """
    Total-variation distance between two finitely supported measures.

    Keys missing from one side count as mass 0.

    Examples:
        >>> total_variation({1: 1.0}, {-1: 1.0})
        1.0
        >>> total_variation({0: 0.5, 1: 0.5}, {0: 0.5, 1: 0.5})
        0.0
    """
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def max_abs_diff(
    f: Mapping[Hashable, float],
    g: Mapping[Hashable, float],
    keys: Optional[Iterable[Hashable]] = None,
) -> float:
    """Max-norm distance of two vertex functions on ``keys`` (default: common keys)"""
    if keys is None:
        keys = set(f) & set(g)
    diffs = [abs(f[k] - g[k]) for k in keys]
    return max(diffs) if diffs else 0.0


def mean_and_stderr(samples: np.ndarray) -> Tuple[float, float]:
    """
    Sample mean and its standard error.

    Returns (mean, 0.0) for fewer than two samples.
    """
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    if n == 0:
        return 0.0, 0.0
    mean = float(samples.mean())
    if n < 2:
        return mean, 0.0
    return mean, float(samples.std(ddof=1) / math.sqrt(n))


def proportion_stderr(p: float, n: int) -> float:
    """Standard error of an empirical frequency"""
    if n <= 0:
        return 0.0
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def normalize_weights(weights: Dict[Hashable, float]) -> Dict[Hashable, float]:
    """Scale nonnegative weights to sum to one; all-zero input is returned unchanged"""
    total = sum(weights.values())
    if total <= 0:
        return dict(weights)
    return {k: v / total for k, v in weights.items()}
