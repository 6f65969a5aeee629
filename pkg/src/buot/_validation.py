"""Input validation helpers shared across the package.

All public entry points validate through these functions so that shape and
range errors surface as ``ValueError`` with a readable message instead of a
numpy broadcasting failure deep inside a solver.
"""

from __future__ import annotations

import numpy as np


class NonFiniteError(RuntimeError):
    """A computation produced (or received) a non-finite value."""


def as_float_array(x, name="array", ndim=None):
    """Coerce to a float64 ndarray and optionally enforce dimensionality."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def check_finite(arr, name="array"):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return arr


def check_histogram(h, name="histogram", probability=False, tol=1e-12):
    """Validate a nonnegative mass vector.

    Parameters
    ----------
    h : array-like, shape (n,)
        Mass vector. Zero entries are allowed.
    probability : bool
        When True, additionally require the entries to sum to 1 within
        ``tol``.

    Returns
    -------
    ndarray of float64, shape (n,)
    """
    arr = as_float_array(h, name, ndim=1)
    if arr.size < 1:
        raise ValueError(f"{name} must have length >= 1")
    check_finite(arr, name)
    if np.any(arr < 0):
        raise ValueError(f"{name} has negative entries")
    if probability:
        total = float(arr.sum())
        if abs(total - 1.0) > tol:
            raise ValueError(
                f"{name} must sum to 1 within {tol:g} to be a probability "
                f"histogram, got sum {total!r}"
            )
    return arr


def check_cost_matrix(c, name="cost", shape=None, negative_tol=1e-12):
    """Validate a finite, nonnegative cost matrix.

    Entries in ``[-negative_tol, 0)`` are clamped to zero: contraction
    kernels can produce such values through floating-point cancellation of
    exactly-zero costs.
    """
    arr = as_float_array(c, name, ndim=2)
    check_finite(arr, name)
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    lo = float(arr.min()) if arr.size else 0.0
    if lo < 0:
        if lo < -negative_tol:
            raise ValueError(f"{name} has negative entries (min {lo!r})")
        arr = np.maximum(arr, 0.0)
    return arr


def check_prediction_matrix(p, name="predictions", row_tol=1e-9):
    """Validate a row-stochastic matrix of class probabilities."""
    arr = as_float_array(p, name, ndim=2)
    check_finite(arr, name)
    if np.any(arr < -row_tol) or np.any(arr > 1.0 + row_tol):
        raise ValueError(f"{name} has entries outside [0, 1]")
    rows = arr.sum(axis=1)
    if np.any(np.abs(rows - 1.0) > row_tol):
        worst = float(np.max(np.abs(rows - 1.0)))
        raise ValueError(
            f"{name} rows must sum to 1 within {row_tol:g} "
            f"(worst deviation {worst:g})"
        )
    return arr


def check_labels(labels, n_classes, name="labels"):
    """Validate integer class labels in ``[0, n_classes)``."""
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional")
    if not np.issubdtype(arr.dtype, np.integer):
        flt = np.asarray(labels, dtype=np.float64)
        if np.any(flt != np.round(flt)):
            raise ValueError(f"{name} must be integers")
        arr = flt.astype(np.int64)
    else:
        arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
        raise ValueError(
            f"{name} must lie in [0, {n_classes}), got range "
            f"[{arr.min()}, {arr.max()}]"
        )
    return arr
