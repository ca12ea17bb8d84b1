"""Dense float64 tensors and their on-disk format.

A tensor is a C-contiguous ``numpy.float64`` array in row-major order with
every extent >= 1.  All weights, activations, gradients, and image patches
in this package are carried in this form; the helpers here enforce the
contract and provide the serialization used by checkpoints.

64-bit precision is deliberate: the finite-difference gradient checks in
the test suite need it, and at desk scale the memory cost is irrelevant.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError

DTYPE = np.float64


def as_tensor(data, shape: Sequence[int] | None = None) -> np.ndarray:
    """Coerce ``data`` to a row-major float64 array, optionally reshaped."""
    arr = np.ascontiguousarray(data, dtype=DTYPE)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    _check_extents(arr.shape)
    if shape is not None:
        arr = reshape(arr, shape)
    return arr


def zeros(shape: Sequence[int]) -> np.ndarray:
    _check_extents(shape)
    return np.zeros(tuple(shape), dtype=DTYPE)


def reshape(t: np.ndarray, new_shape: Sequence[int]) -> np.ndarray:
    """Reinterpret the flat row-major data under a new shape.

    Raises ShapeError unless the extent products match.
    """
    new_shape = tuple(int(e) for e in new_shape)
    _check_extents(new_shape)
    if math.prod(new_shape) != t.size:
        raise ShapeError(
            f"cannot reshape {t.size} elements into {new_shape} "
            f"({math.prod(new_shape)} elements)"
        )
    return np.ascontiguousarray(t).reshape(new_shape)


def pad2d(t: np.ndarray, pad: int) -> np.ndarray:
    """Zero-pad the two trailing spatial axes of a (C, H, W) tensor."""
    if pad < 0:
        raise ShapeError(f"pad must be >= 0, got {pad}")
    if t.ndim != 3:
        raise ShapeError(f"pad2d expects a (C, H, W) tensor, got shape {t.shape}")
    if pad == 0:
        return t.copy()
    return np.pad(t, ((0, 0), (pad, pad), (pad, pad)), mode="constant")


def save_tensor(path: str | Path, t: np.ndarray) -> None:
    """Write a tensor as a .npy file (flat binary plus shape header)."""
    np.save(str(path), np.ascontiguousarray(t, dtype=DTYPE), allow_pickle=False)


def load_tensor(path: str | Path) -> np.ndarray:
    arr = np.load(str(path), allow_pickle=False)
    return as_tensor(arr)


def _check_extents(shape: Iterable[int]) -> None:
    shape = tuple(shape)
    if len(shape) == 0:
        raise ShapeError("tensor shape must be non-empty")
    if any(int(e) < 1 for e in shape):
        raise ShapeError(f"every extent must be >= 1, got {shape}")
