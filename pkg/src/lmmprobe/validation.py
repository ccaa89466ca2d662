"""Input validation helpers used at the package's public API boundaries."""

from __future__ import annotations

import numpy as np


def as_vector(values, *, name: str = "values", dtype=np.float64) -> np.ndarray:
    """Coerce ``values`` to a finite, non-empty 1-D float array.

    Raises ValueError when the input is empty, not 1-D, or contains
    NaN/Inf entries.
    """
    arr = np.asarray(values, dtype=dtype)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_matrix(values, *, name: str = "values", dtype=None) -> np.ndarray:
    """Coerce ``values`` to a finite, non-empty 2-D float array.

    Ragged inputs (rows of differing length) fail the 2-D check, which is
    how per-row dimension mismatches surface. Float inputs keep their
    dtype unless ``dtype`` is given; everything else is promoted to
    float64.
    """
    try:
        arr = np.asarray(values, dtype=dtype)
    except ValueError as exc:
        raise ValueError(f"{name}: rows have inconsistent dimensions ({exc})") from None
    if arr.dtype == object:
        raise ValueError(f"{name}: rows have inconsistent dimensions")
    if dtype is None and not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_dim(arr: np.ndarray, expected: int, *, name: str = "vector") -> None:
    """Check that the trailing axis of ``arr`` has length ``expected``."""
    if arr.shape[-1] != expected:
        raise ValueError(f"{name} has dim {arr.shape[-1]}, expected {expected}")


def as_label_indices(labels, num_classes: int, *, name: str = "labels") -> np.ndarray:
    """Coerce class labels to a 1-D int array and range-check them."""
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.floor(arr)):
            raise ValueError(f"{name} must be integer class indices")
        arr = arr.astype(np.int64)
    else:
        arr = arr.astype(np.int64)
    if arr.min() < 0 or arr.max() >= num_classes:
        raise ValueError(
            f"{name} out of range [0, {num_classes}): "
            f"found [{arr.min()}, {arr.max()}]"
        )
    return arr


def check_positive(value, *, name: str) -> None:
    if value <= 0:
        raise ValueError(f"{name} must be positive, got {value}")
