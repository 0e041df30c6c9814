"""Small argument checks shared by the estimators and the CLI."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array as _sk_check_array
from sklearn.utils.validation import check_is_fitted

__all__ = ["check_signals", "check_positive", "check_choice", "check_is_fitted"]


def check_signals(X, n_steps: int | None = None, name: str = "X") -> np.ndarray:
    """2-D finite float array of z-perturbation rows.

    A 1-D input is treated as a single row.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    X = _sk_check_array(X, dtype=np.float64, ensure_all_finite=True, input_name=name)
    if n_steps is not None and X.shape[1] != n_steps:
        raise ValueError(f"{name} has {X.shape[1]} samples per row, expected {n_steps}")
    return X


def check_positive(value, name: str, allow_zero: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite number, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise ValueError(f"{name} must be {'>= 0' if allow_zero else '> 0'}, got {value!r}")
    return float(value)


def check_choice(value, name: str, choices) -> str:
    if value not in choices:
        raise ValueError(f"{name} must be one of {tuple(choices)}, got {value!r}")
    return value
