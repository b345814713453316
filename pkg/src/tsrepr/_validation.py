"""Input validation helpers shared by the functional API and the estimator."""

from __future__ import annotations

import numpy as np


def check_series_array(X, name: str = "X") -> np.ndarray:
    """Coerce to a float64 (N, T, F) array; NaN cells are allowed (missing).

    2-D input is treated as (N, T) univariate and gets a trailing feature axis.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.ndim != 3:
        raise ValueError(f"{name} must be (N, T, F) or (N, T), got ndim={X.ndim}")
    if X.shape[0] < 1 or X.shape[1] < 1 or X.shape[2] < 1:
        raise ValueError(f"{name} has an empty dimension: shape={X.shape}")
    if np.isinf(X).any():
        raise ValueError(f"{name} contains infinite values")
    return X


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_fraction(value, name: str, closed_low: bool = True, closed_high: bool = True) -> float:
    value = float(value)
    lo_ok = value >= 0.0 if closed_low else value > 0.0
    hi_ok = value <= 1.0 if closed_high else value < 1.0
    if not (lo_ok and hi_ok):
        lo, hi = "[" if closed_low else "(", "]" if closed_high else ")"
        raise ValueError(f"{name} must lie in {lo}0, 1{hi}, got {value}")
    return value


def check_choice(value, name: str, choices: tuple) -> str:
    if value not in choices:
        raise ValueError(f"{name} must be one of {choices}, got {value!r}")
    return value


def require_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr
