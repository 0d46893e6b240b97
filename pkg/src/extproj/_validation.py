"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

from .errors import DimMismatch


def as_points(X, dim: int | None = None, name: str = "X") -> tuple[np.ndarray, bool]:
    """Coerce ``X`` to a float ``(N, dim)`` array.

    Returns the array and whether the input was a single point, so callers can
    hand back a result of matching rank.
    """
    arr = np.asarray(X, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    arr = check_array(arr, dtype=float, ensure_2d=True, ensure_min_samples=0,
                      input_name=name)
    if dim is not None and arr.shape[1] != dim:
        raise DimMismatch(f"{name} has dimension {arr.shape[1]}, expected {dim}")
    return arr, single


def unbatch(Y: np.ndarray, single: bool) -> np.ndarray:
    return Y[0] if single else Y


def check_positive(value, name: str):
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return value
