"""Input coercion helpers used by the estimators and the functional API."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ValidationError
from .tensor_io import EmbeddingMatrix, ResponseTensor


def as_features(X, name="X", min_samples=2) -> np.ndarray:
    """Return a finite float64 2-D array."""
    if isinstance(X, EmbeddingMatrix):
        X = X.data
    try:
        return check_array(X, dtype=np.float64, ensure_min_samples=min_samples,
                           input_name=name)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def as_targets(Y, name="Y") -> tuple[np.ndarray, tuple[int, ...]]:
    """Flatten targets to ``(n_samples, n_targets)``, returning the original trailing shape.

    A 3-D response array ``(n_words, n_channels, n_windows)`` becomes
    ``(n_words, n_channels * n_windows)`` in C order.
    """
    if isinstance(Y, ResponseTensor):
        Y = Y.data
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.ndim < 2:
        raise ValidationError(f"{name} must have a sample axis and at least one target")
    trailing = Y.shape[1:]
    flat = Y.reshape(Y.shape[0], -1)
    if not np.all(np.isfinite(flat)):
        raise ValidationError(f"{name} contains non-finite values")
    return flat, trailing


def as_responses(M, name="M") -> np.ndarray:
    if isinstance(M, ResponseTensor):
        return M.data
    arr = np.asarray(M, dtype=np.float64)
    if arr.ndim != 3:
        raise ValidationError(f"{name} must be (n_words, n_channels, n_windows), got {arr.shape}")
    return arr


def check_same_shape(*arrays, names=None):
    shapes = [np.shape(a) for a in arrays]
    if any(s != shapes[0] for s in shapes[1:]):
        label = ", ".join(names) if names else "inputs"
        raise ValidationError(f"shape mismatch between {label}: {shapes}")


def check_lambda_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64).ravel()
    if grid.size == 0:
        raise ValidationError("lambda grid is empty")
    if np.any(grid < 0) or not np.all(np.isfinite(grid)):
        raise ValidationError("lambda grid values must be finite and non-negative")
    if np.any(np.diff(grid) <= 0):
        raise ValidationError("lambda grid must be strictly increasing")
    return grid
