"""Dense array plumbing shared by every layer of the numeric core.

Arrays are plain numpy ndarrays; image batches are NCHW. Training runs in
float32, verification oracles in float64. Any NaN/Inf leaving an engine
operation is a fault, surfaced via :class:`NumericalFault`.
"""

from __future__ import annotations

import numpy as np

Tensor = np.ndarray

FLOAT32 = np.float32
FLOAT64 = np.float64

_PRECISIONS = {"float32": FLOAT32, "float64": FLOAT64}


class NumericalFault(RuntimeError):
    """A non-finite value escaped an engine operation."""


class ShapeMismatch(ValueError):
    """Operand shapes violate an operation's contract."""


def dtype_for(precision: str) -> np.dtype:
    if precision not in _PRECISIONS:
        raise ValueError(f"unknown precision {precision!r}; expected one of {sorted(_PRECISIONS)}")
    return np.dtype(_PRECISIONS[precision])


def require_finite(arr: Tensor, what: str) -> Tensor:
    """Raise :class:`NumericalFault` if ``arr`` contains NaN or Inf."""
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NumericalFault(f"{what}: {bad} non-finite value(s) in array of shape {arr.shape}")
    return arr


def require_shape(arr: Tensor, shape: tuple, what: str) -> Tensor:
    """Check an exact shape; ``None`` entries are wildcards."""
    if len(arr.shape) != len(shape) or any(
        e is not None and a != e for a, e in zip(arr.shape, shape)
    ):
        raise ShapeMismatch(f"{what}: expected shape {shape}, got {arr.shape}")
    return arr
