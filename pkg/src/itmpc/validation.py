"""Input-validation helpers built on sklearn's ``check_array``."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length


def check_batch(a, width: int, name: str = "array") -> np.ndarray:
    """Return ``a`` as a finite float ``(N, width)`` array; a 1-D vector becomes one row."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    a = check_array(a, dtype=np.float64, ensure_all_finite=True, input_name=name)
    if a.shape[1] != width:
        raise ValueError(f"{name} must have {width} columns, got {a.shape[1]}")
    return a


def check_xy(X, y, x_width: int, y_width: int):
    X = check_batch(X, x_width, "X")
    y = check_batch(y, y_width, "y")
    check_consistent_length(X, y)
    return X, y


def check_costs(costs) -> np.ndarray:
    c = np.asarray(costs, dtype=float).reshape(-1)
    if c.size < 1:
        raise ValueError("need at least one cost")
    if np.any(np.isnan(c)):
        raise ValueError("costs contain NaN")
    if not np.all(np.isfinite(c)):
        raise ValueError("costs must be finite")
    return c
