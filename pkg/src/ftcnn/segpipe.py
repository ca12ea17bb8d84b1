"""Interface segmentation post-processor.

Pipeline: dense 3-class inference over an ROI produces two per-pixel
confidence maps (one per interface); column-wise argmax thins each map to
a step-like one-pixel boundary; an open snake smooths each boundary; the
mean vertical distance between the two smoothed boundaries is the
thickness readout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import EvaluationError, NumericalError, PipelineError
from .nn import ArchitectureSpec, NetworkState, forward
from .tensor import as_tensor


@dataclass
class ConfidenceMaps:
    """Per-pixel probabilities for the two interfaces; background is the rest."""

    map_li: np.ndarray  # (H, W)
    map_ma: np.ndarray  # (H, W)

    def __post_init__(self):
        self.map_li = as_tensor(self.map_li)
        self.map_ma = as_tensor(self.map_ma)
        if self.map_li.shape != self.map_ma.shape or self.map_li.ndim != 2:
            raise PipelineError("confidence maps must be two equal (H, W) arrays")
        if np.any(self.map_li + self.map_ma > 1.0 + 1e-9):
            raise PipelineError("per-pixel interface probabilities must sum to <= 1")

    @property
    def shape(self) -> tuple[int, int]:
        return self.map_li.shape


@dataclass
class BoundaryPair:
    """One real-valued row coordinate per column for each interface."""

    y_li: np.ndarray
    y_ma: np.ndarray

    def __post_init__(self):
        self.y_li = np.asarray(self.y_li, dtype=float)
        self.y_ma = np.asarray(self.y_ma, dtype=float)
        if self.y_li.shape != self.y_ma.shape or self.y_li.ndim != 1:
            raise PipelineError("boundaries must be two equal-length row vectors")
        if not (np.isfinite(self.y_li).all() and np.isfinite(self.y_ma).all()):
            raise NumericalError("boundary coordinates must be finite")

    @property
    def width(self) -> int:
        return len(self.y_li)


@dataclass
class SnakeParams:
    tension: float = 0.2
    rigidity: float = 0.1
    external_weight: float = 1.0
    step_size: float = 0.5
    max_iters: int = 500
    tol: float = 0.01

    def __post_init__(self):
        if min(self.tension, self.rigidity, self.external_weight, self.step_size, self.tol) < 0:
            raise PipelineError("snake parameters must be non-negative")
        if self.max_iters < 1:
            raise PipelineError("max_iters must be >= 1")


def infer_confidence_maps(
    net: NetworkState,
    spec: ArchitectureSpec,
    roi: np.ndarray,
    patch_size: int,
    batch_size: int = 1024,
) -> ConfidenceMaps:
    """Classify the centered patch of every ROI pixel (borders mirrored)."""
    if spec.class_count() != 3:
        raise PipelineError(f"dense inference needs a 3-class net, got {spec.class_count()}")
    roi = as_tensor(roi)
    if roi.ndim != 2:
        raise PipelineError(f"ROI must be a (H, W) grayscale image, got {roi.shape}")
    channels = spec.input_shape[0]
    if channels not in (1, 3):
        raise PipelineError(f"net must take 1- or 3-channel input, got {channels}")
    if tuple(spec.input_shape[1:]) != (patch_size, patch_size):
        raise PipelineError(
            f"net input {spec.input_shape} does not match patch size {patch_size}"
        )
    h, w = roi.shape
    lo = patch_size // 2
    hi = patch_size - 1 - lo
    padded = np.pad(roi, ((lo, hi), (lo, hi)), mode="reflect")
    windows = sliding_window_view(padded, (patch_size, patch_size))
    patches = windows.reshape(h * w, 1, patch_size, patch_size)
    if channels == 3:
        patches = np.repeat(patches, 3, axis=1)
    out = np.empty((h * w, 3))
    for start in range(0, h * w, batch_size):
        stop = min(start + batch_size, h * w)
        chunk = np.ascontiguousarray(patches[start:stop])
        out[start:stop] = forward(net, spec, chunk).probs
    return ConfidenceMaps(map_li=out[:, 1].reshape(h, w), map_ma=out[:, 2].reshape(h, w))


def thin_columnwise(maps: ConfidenceMaps) -> BoundaryPair:
    """Per column, the row with the maximum response (smallest row on ties)."""
    return BoundaryPair(
        y_li=maps.map_li.argmax(axis=0).astype(float),
        y_ma=maps.map_ma.argmax(axis=0).astype(float),
    )


def snake_energy(y: np.ndarray, image_map: np.ndarray, params: SnakeParams) -> float:
    """Smoothness-plus-image energy of an open snake with one y per column."""
    d1 = np.diff(y)
    d2 = np.diff(y, n=2)
    ext = _sample_columns(image_map, y)
    e = (
        params.tension * float(np.sum(d1 * d1))
        + params.rigidity * float(np.sum(d2 * d2))
        - params.external_weight * float(np.sum(ext))
    )
    if not np.isfinite(e):
        raise NumericalError("snake energy is not finite")
    return e


def snake_smooth(
    boundary: np.ndarray, image_map: np.ndarray, params: SnakeParams
) -> np.ndarray:
    """Gradient descent on the vertical coordinates with backtracking.

    Steps that would increase the energy are halved away, so the energy is
    non-increasing across accepted iterations.  Stops when the largest
    vertical move drops below ``params.tol`` or after ``params.max_iters``.
    """
    image_map = as_tensor(image_map)
    if image_map.ndim != 2:
        raise PipelineError(f"image map must be (H, W), got {image_map.shape}")
    h, w = image_map.shape
    y = np.clip(np.asarray(boundary, dtype=float).copy(), 0.0, h - 1.0)
    if y.shape != (w,):
        raise PipelineError(f"boundary length {y.shape} does not match map width {w}")
    grad_map = _vertical_gradient(image_map)
    energy = snake_energy(y, image_map, params)
    for _ in range(params.max_iters):
        grad = _snake_gradient(y, grad_map, params)
        step = params.step_size
        while True:
            candidate = np.clip(y - step * grad, 0.0, h - 1.0)
            new_energy = snake_energy(candidate, image_map, params)
            if new_energy <= energy:
                break
            step *= 0.5
            if step < 1e-12:  # no descent direction left
                return y
        moved = float(np.max(np.abs(candidate - y)))
        y, energy = candidate, new_energy
        if moved < params.tol:
            break
    return y


def _snake_gradient(y: np.ndarray, grad_map: np.ndarray, params: SnakeParams) -> np.ndarray:
    w = len(y)
    g = np.zeros(w)
    d1 = np.diff(y)
    g[:-1] -= 2.0 * params.tension * d1
    g[1:] += 2.0 * params.tension * d1
    if w >= 3:
        d2 = np.diff(y, n=2)
        g[: w - 2] += 2.0 * params.rigidity * d2
        g[1 : w - 1] -= 4.0 * params.rigidity * d2
        g[2:] += 2.0 * params.rigidity * d2
    g -= params.external_weight * _sample_columns(grad_map, y)
    return g


def _vertical_gradient(image_map: np.ndarray) -> np.ndarray:
    # Centered vertical difference (one-sided at the borders); sampling this
    # field instead of differencing the bilinear interpolant keeps exact
    # per-column ridges stationary.
    return np.gradient(image_map, axis=0)


def _sample_columns(field: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear sample of field[y[c], c] for every column c."""
    h, w = field.shape
    yy = np.clip(y, 0.0, h - 1.0)
    r0 = np.minimum(np.floor(yy).astype(int), h - 2) if h > 1 else np.zeros(w, dtype=int)
    frac = yy - r0
    cols = np.arange(w)
    if h == 1:
        return field[0, cols]
    return (1.0 - frac) * field[r0, cols] + frac * field[r0 + 1, cols]


@dataclass
class ThicknessResult:
    mean_thickness: float
    per_column: np.ndarray
    crossed: bool  # true when the interfaces cross anywhere


def measure_thickness(pair: BoundaryPair, px_to_mm: float) -> ThicknessResult:
    """Mean vertical distance between the two boundaries, scaled to mm."""
    per_column = (pair.y_ma - pair.y_li) * px_to_mm
    return ThicknessResult(
        mean_thickness=float(per_column.mean()),
        per_column=per_column,
        crossed=bool(np.any(per_column < 0)),
    )


def boundary_error(predicted: BoundaryPair, truth: BoundaryPair) -> tuple[float, float]:
    """Mean absolute vertical distance per interface, in pixels."""
    if predicted.width != truth.width:
        raise EvaluationError(
            f"boundary widths differ: {predicted.width} vs {truth.width}"
        )
    err_li = float(np.abs(predicted.y_li - truth.y_li).mean())
    err_ma = float(np.abs(predicted.y_ma - truth.y_ma).mean())
    return err_li, err_ma


def export_boundaries_csv(path: str | Path, pair: BoundaryPair, px_to_mm: float) -> None:
    thickness = measure_thickness(pair, px_to_mm)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["column", "yLI", "yMA", "thickness"])
        for c in range(pair.width):
            writer.writerow(
                [
                    c,
                    repr(float(pair.y_li[c])),
                    repr(float(pair.y_ma[c])),
                    repr(float(thickness.per_column[c])),
                ]
            )


def merged_map_image(maps: ConfidenceMaps) -> np.ndarray:
    """Color-coded (3, H, W) overlay: green for LI, red for MA."""
    zeros = np.zeros_like(maps.map_li)
    return np.stack([maps.map_ma, maps.map_li, zeros])
