"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array, column_or_1d


def check_training_data(X, y):
    X = check_array(X, dtype=float, ensure_2d=True, ensure_min_samples=1)
    y = column_or_1d(np.asarray(y, dtype=float))
    if len(y) != len(X):
        raise ValueError(f"X has {len(X)} rows but y has {len(y)} values")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite values")
    return X, y


def check_cardinalities(cardinalities, n_features: int) -> tuple[int, ...]:
    if cardinalities is None:
        return (0,) * n_features
    card = tuple(int(c) for c in cardinalities)
    if len(card) != n_features:
        raise ValueError(f"{len(card)} cardinalities given for {n_features} columns")
    if any(c < 0 for c in card):
        raise ValueError("cardinalities must be >= 0")
    if any(c > 62 for c in card):
        raise ValueError("categorical dimensions are limited to 62 categories")
    return card


def check_features(X: np.ndarray, cardinalities) -> None:
    """Numeric columns must lie in [0, 1]; categorical columns hold indices."""
    for j, k in enumerate(cardinalities):
        col = X[:, j]
        if k:
            if np.any(col != np.round(col)) or col.min() < 0 or col.max() > k - 1:
                raise ValueError(f"column {j}: expected category indices in 0..{k - 1}")
        elif col.min() < 0.0 or col.max() > 1.0:
            raise ValueError(f"column {j}: internal values must lie in [0, 1]")


def check_fraction(value: float, name: str, *, allow_zero: bool = False) -> float:
    value = float(value)
    lo_ok = value >= 0.0 if allow_zero else value > 0.0
    if not (lo_ok and value <= 1.0):
        bound = "[0, 1]" if allow_zero else "(0, 1]"
        raise ValueError(f"{name} must lie in {bound}, got {value}")
    return value
