"""Input validation for the estimator API, built on scikit-learn's checks."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length

from .data_io import Dataset


def check_regressor(X) -> np.ndarray:
    """Endogenous regressor as a finite 1-d array (a single column is accepted)."""
    X = check_array(X, ensure_2d=False, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"X must hold one regressor column, got {X.shape[1]}")
        X = X[:, 0]
    return X


def check_instruments(Z) -> np.ndarray:
    Z = check_array(Z, ensure_2d=False, dtype=float)
    return Z[:, None] if Z.ndim == 1 else Z


def to_dataset(X, y, Z=None) -> Dataset:
    """Validate ``(X, y, Z)`` and pack them as ``(y1=y, y2=X, x=Z)``."""
    y2 = check_regressor(X)
    y1 = check_array(y, ensure_2d=False, dtype=float)
    if y1.ndim != 1:
        raise ValueError("y must be one-dimensional")
    x = check_instruments(y2 if Z is None else Z)
    check_consistent_length(y2, y1, x)
    return Dataset(y1, y2, x)
