"""Synthetic dataset generators for desk-scale experiments.

Three families:

* shape classification sets (source/target pairs for transfer runs),
* 2-channel vessel/embolism plane pairs for the embolism augmentation path,
* ultrasound-like ROIs with sinusoidal interfaces for the segmentation
  pipeline.

Everything is seed-deterministic; images are single-channel floats in [0, 1]
unless noted.  Units model acquisition groups (videos / patients): nuisance
parameters such as background level are drawn once per unit so unit-level
splits and reductions behave like the real protocol.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..segpipe import BoundaryPair
from .augment import extract_interface_patches
from .patchset import LabeledPatchSet, concat_patchsets

SOURCE_CLASSES = ("disk", "square", "triangle_up", "ring")
TARGET_CLASSES = ("cross", "triangle_down")


def _coords(size: int, cx: float, cy: float, angle: float) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:size, 0:size].astype(float)
    dx = xs - cx
    dy = ys - cy
    if angle:
        c, s = np.cos(angle), np.sin(angle)
        dx, dy = c * dx + s * dy, -s * dx + c * dy
    return dx, dy


def shape_mask(
    kind: str, size: int, cx: float, cy: float, radius: float, angle: float = 0.0
) -> np.ndarray:
    """Soft-edged (antialiased) mask of a canonical shape on a size x size grid."""
    dx, dy = _coords(size, cx, cy, angle)
    r = np.hypot(dx, dy)
    if kind == "disk":
        d = radius - r
    elif kind == "ring":
        d = 0.3 * radius - np.abs(r - 0.85 * radius)
    elif kind == "square":
        d = 0.82 * radius - np.maximum(np.abs(dx), np.abs(dy))
    elif kind in ("triangle_up", "triangle_down"):
        up = -dy if kind == "triangle_up" else dy  # y axis points down in images
        # three outward edge normals of an equilateral triangle
        g = np.maximum.reduce(
            [
                np.cos(a) * dx + np.sin(a) * up
                for a in (np.pi / 6, 5 * np.pi / 6, 3 * np.pi / 2)
            ]
        )
        d = 0.58 * radius - g
    elif kind == "cross":
        t = 0.32 * radius
        arm_h = np.minimum(t - np.abs(dy), radius - np.abs(dx))
        arm_v = np.minimum(t - np.abs(dx), radius - np.abs(dy))
        d = np.maximum(arm_h, arm_v)
    elif kind == "bar":
        d = np.minimum(0.3 * radius - np.abs(dy), radius - np.abs(dx))
    else:
        raise ConfigError(f"unknown shape kind {kind!r}")
    return np.clip(d + 0.5, 0.0, 1.0)


def shape_classification_set(
    class_kinds: tuple[str, ...],
    n_units: int,
    per_unit: int,
    image_size: int = 32,
    noise: float = 0.2,
    seed: int = 0,
    unit_tag: str = "u",
    angle_jitter: float = 0.22,
) -> LabeledPatchSet:
    """Balanced shape-classification set with per-unit appearance nuisances."""
    rng = np.random.default_rng(seed)
    n = n_units * per_unit
    patches = np.empty((n, 1, image_size, image_size))
    labels = np.empty(n, dtype=np.int64)
    group_ids, unit_ids = [], []
    i = 0
    for u in range(n_units):
        bg = rng.uniform(0.05, 0.3)
        fg = rng.uniform(0.55, 0.95)
        for j in range(per_unit):
            cls = int(rng.integers(0, len(class_kinds)))
            cx = image_size / 2 + rng.uniform(-image_size / 8, image_size / 8)
            cy = image_size / 2 + rng.uniform(-image_size / 8, image_size / 8)
            radius = rng.uniform(image_size / 5.0, image_size / 3.4)
            angle = rng.uniform(-angle_jitter, angle_jitter)
            mask = shape_mask(class_kinds[cls], image_size, cx, cy, radius, angle)
            img = bg + (fg - bg) * mask + rng.normal(0.0, noise, (image_size, image_size))
            patches[i, 0] = np.clip(img, 0.0, 1.0)
            labels[i] = cls
            group_ids.append(i)
            unit_ids.append(f"{unit_tag}{u}")
            i += 1
    return LabeledPatchSet(
        patches=patches, labels=labels, group_ids=group_ids, unit_ids=unit_ids
    )


def transfer_source_set(
    n_units: int, per_unit: int, image_size: int = 32, noise: float = 0.2, seed: int = 0
) -> LabeledPatchSet:
    return shape_classification_set(
        SOURCE_CLASSES, n_units, per_unit, image_size, noise, seed, unit_tag="src"
    )


def transfer_target_set(
    n_units: int, per_unit: int, image_size: int = 32, noise: float = 0.2, seed: int = 0
) -> LabeledPatchSet:
    return shape_classification_set(
        TARGET_CLASSES, n_units, per_unit, image_size, noise, seed, unit_tag="tgt"
    )


# ---------------------------------------------------------------------------
# Embolism-like 2-channel plane pairs

def pe_pair_stack(
    seed: int, size: int = 48, positive: bool = True, rotations: int = 6
) -> np.ndarray:
    """(rotations, 2, size, size) stack of cross-sectional and longitudinal
    vessel views; positives carry a dark filling defect whose in-plane
    position advances with the rotation index."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size].astype(float)
    c = (size - 1) / 2.0
    vessel_r = size * rng.uniform(0.18, 0.24)
    stack = np.empty((rotations, 2, size, size))
    blob_r = vessel_r * rng.uniform(0.4, 0.6)
    blob_off = vessel_r * rng.uniform(0.0, 0.35)
    phase = rng.uniform(0, 2 * np.pi)
    seg_x = rng.uniform(-0.3, 0.3) * size
    for k in range(rotations):
        noise_a = rng.normal(0.0, 0.04, (size, size))
        noise_b = rng.normal(0.0, 0.04, (size, size))
        # cross-section: bright disk (contrast-filled vessel)
        rr = np.hypot(xs - c, ys - c)
        cross = 0.15 + 0.7 * np.clip(vessel_r - rr + 0.5, 0, 1)
        # longitudinal: bright horizontal band
        longi = 0.15 + 0.7 * np.clip(vessel_r - np.abs(ys - c) + 0.5, 0, 1)
        if positive:
            ang = phase + k * (2 * np.pi / rotations)
            bx = c + blob_off * np.cos(ang)
            by = c + blob_off * np.sin(ang)
            blob = np.clip(blob_r - np.hypot(xs - bx, ys - by) + 0.5, 0, 1)
            cross -= 0.55 * blob
            seg = np.clip(blob_r - np.hypot(xs - (c + seg_x), ys - c) + 0.5, 0, 1)
            longi -= 0.55 * seg
        stack[k, 0] = np.clip(cross + noise_a, 0, 1)
        stack[k, 1] = np.clip(longi + noise_b, 0, 1)
    return stack


# ---------------------------------------------------------------------------
# Ultrasound-like ROIs with sinusoidal interfaces

def sinus_roi(
    width: int,
    height: int,
    seed: int,
    offset_px: float = 6.0,
    noise: float = 0.04,
) -> tuple[np.ndarray, BoundaryPair]:
    """One ROI plus its ground-truth interfaces.

    Both interfaces render as sharp bright ridges; what tells them apart is
    the context, as in real vessel walls: a dark lumen above the near ridge
    and a bright far field below the far one.  The band transitions sit 3 px
    away from the ridge rows so each ridge's immediate neighborhood stays
    symmetric, which keeps the classifier's probability peak centered on the
    true row instead of being pushed off by a one-sided background.
    """
    rng = np.random.default_rng(seed)
    amp = rng.uniform(2.0, 4.0)
    period = rng.uniform(40.0, 80.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    margin = 14.0
    base_row = rng.uniform(margin + amp, height - margin - amp - offset_px)
    cols = np.arange(width)
    y_li = base_row + amp * np.sin(2 * np.pi * cols / period + phase)
    y_ma = y_li + offset_px

    rows = np.arange(height, dtype=float)[:, None]
    d_li = rows - y_li[None, :]
    d_ma = rows - y_ma[None, :]
    lumen = 1.0 / (1.0 + np.exp((d_li + 3.0) / 1.2))   # ~1 well above the near ridge
    far = 1.0 / (1.0 + np.exp(-(d_ma - 3.0) / 1.5))    # ~1 well below the far ridge
    base = 0.22 + (0.06 - 0.22) * lumen + (0.40 - 0.22) * far
    ridge_li = 0.55 * np.exp(-0.5 * (d_li / 0.9) ** 2)
    ridge_ma = 0.55 * np.exp(-0.5 * (d_ma / 0.9) ** 2)
    img = base + ridge_li + ridge_ma + rng.normal(0.0, noise, (height, width))
    return np.clip(img, 0.0, 1.0), BoundaryPair(y_li=y_li, y_ma=y_ma)


def cimt_training_set(
    n_rois: int,
    counts: tuple[int, int, int],
    patch_size: int,
    seed: int,
    roi_width: int = 92,
    roi_height: int = 64,
    offset_px: float = 6.0,
    noise: float = 0.04,
) -> LabeledPatchSet:
    """Interface patches pooled over n_rois synthetic ROIs (one unit per ROI)."""
    parts = []
    per_roi = sum(counts)
    for i in range(n_rois):
        roi, truth = sinus_roi(roi_width, roi_height, seed=seed + 7919 * i,
                               offset_px=offset_px, noise=noise)
        parts.append(
            extract_interface_patches(
                roi, truth, counts, patch_size,
                seed=seed + 7919 * i + 1,
                unit_id=f"roi{i}",
                group_offset=per_roi * i,
            )
        )
    return concat_patchsets(parts)


def cimt_test_rois(
    n_rois: int,
    seed: int,
    roi_width: int = 92,
    roi_height: int = 64,
    offset_px: float = 6.0,
    noise: float = 0.04,
) -> list[tuple[np.ndarray, BoundaryPair]]:
    return [
        sinus_roi(roi_width, roi_height, seed=seed + 104729 * (i + 1),
                  offset_px=offset_px, noise=noise)
        for i in range(n_rois)
    ]
