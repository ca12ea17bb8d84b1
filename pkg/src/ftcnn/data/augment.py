"""Patch augmentation pipelines.

Each pipeline enumerates its variants in a fixed order and is deterministic
under a fixed seed, so the documented cardinalities (216 polyp patches per
candidate, 54 embolism patches, n random frame crops) are exact.
"""

from __future__ import annotations

import numpy as np

from ..errors import AugmentationError, ExtractionError
from ..segpipe import BoundaryPair
from ..tensor import as_tensor
from .patchset import BoundingBox, LabeledPatchSet

POLYP_SCALES = (1.0, 1.2, 1.5)
POLYP_OFFSETS = (-0.1, 0.0, 0.1)     # fraction of the resized box, per axis
PE_SCALES_MM = (10.0, 15.0, 20.0)
PE_AXIS_OFFSETS = (-0.2, 0.0, 0.2)   # fraction of the patch physical size
PE_ROTATIONS = 6                     # original plane pair plus 5 rotated variants
DIHEDRAL_COUNT = 8
D_FAR_DEFAULT = 8.0


def dihedral_transform(patch: np.ndarray, k: int) -> np.ndarray:
    """Apply the k-th element of the 8-element mirror/rotation group to (C, H, W)."""
    if not 0 <= k < DIHEDRAL_COUNT:
        raise AugmentationError(f"dihedral index must be in [0, 8), got {k}")
    if k < 4:
        return np.ascontiguousarray(np.rot90(patch, k, axes=(1, 2)))
    flipped = patch[:, :, ::-1]  # horizontal mirror
    return np.ascontiguousarray(np.rot90(flipped, k - 4, axes=(1, 2)))


def bilinear_crop(
    image: np.ndarray, rect: tuple[float, float, float, float], out_hw: tuple[int, int]
) -> np.ndarray:
    """Resample an axis-aligned real-valued rect of (C, H, W) to out_hw.

    Rects live in edge coordinates: pixel k spans [k, k+1), so the rect
    (x, y, w, h) with integer fields covers exactly the w x h pixel block
    whose top-left pixel is (x, y), and resampling it at its own size is the
    identity.  Output pixel centers map linearly onto the rect; source
    coordinates are clamped to the image, and values are interpolated
    bilinearly.
    """
    image = as_tensor(image)
    if image.ndim != 3:
        raise AugmentationError(f"expected a (C, H, W) image, got {image.shape}")
    x0, y0, rw, rh = rect
    oh, ow = out_hw
    sy = y0 + (np.arange(oh) + 0.5) * rh / oh - 0.5
    sx = x0 + (np.arange(ow) + 0.5) * rw / ow - 0.5
    return _sample_grid(image, sy, sx)


def _sample_grid(image: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    _, h, w = image.shape
    sy = np.clip(sy, 0.0, h - 1.0)
    sx = np.clip(sx, 0.0, w - 1.0)
    y0 = np.minimum(np.floor(sy).astype(int), max(h - 2, 0))
    x0 = np.minimum(np.floor(sx).astype(int), max(w - 2, 0))
    fy = (sy - y0)[None, :, None]
    fx = (sx - x0)[None, None, :]
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    tl = image[:, y0[:, None], x0[None, :]]
    tr = image[:, y0[:, None], x1[None, :]]
    bl = image[:, y1[:, None], x0[None, :]]
    br = image[:, y1[:, None], x1[None, :]]
    top = tl + (tr - tl) * fx
    bot = bl + (br - bl) * fx
    return np.ascontiguousarray(top + (bot - top) * fy)


def augment_polyp(
    image: np.ndarray,
    box: BoundingBox,
    out_size: int,
    scales: tuple[float, ...] = POLYP_SCALES,
    offsets: tuple[float, ...] = POLYP_OFFSETS,
) -> np.ndarray:
    """Scale x translation x mirror/rotation expansion of one candidate box.

    With the defaults: 3 scales x 9 offsets x 8 transforms = 216 patches,
    enumerated scale-major, then row offset, column offset, transform.
    Crops that stick out of the image are shifted back inside.
    """
    image = as_tensor(image)
    if image.ndim != 3:
        raise AugmentationError(f"expected a (C, H, W) image, got {image.shape}")
    _, h, w = image.shape
    if box.x + box.w <= 0 or box.y + box.h <= 0 or box.x >= w or box.y >= h:
        raise AugmentationError("candidate box lies fully outside the image")
    cx, cy = box.center
    patches = []
    for scale in scales:
        bw, bh = box.w * scale, box.h * scale
        if bw > w or bh > h:
            raise AugmentationError(
                f"scaled box {bw:.1f}x{bh:.1f} does not fit the {w}x{h} image"
            )
        for dy in offsets:
            for dx in offsets:
                x0 = _clamp_origin(cx + dx * bw - bw / 2.0, bw, w)
                y0 = _clamp_origin(cy + dy * bh - bh / 2.0, bh, h)
                crop = bilinear_crop(image, (x0, y0, bw, bh), (out_size, out_size))
                for k in range(DIHEDRAL_COUNT):
                    patches.append(dihedral_transform(crop, k))
    return np.stack(patches)


def _clamp_origin(origin: float, extent: float, limit: int) -> float:
    return float(min(max(origin, 0.0), limit - extent))


def augment_pe(
    pair_stack: np.ndarray,
    center: tuple[float, float],
    vessel_axis: tuple[float, float],
    mm_per_px: float,
    out_size: int,
    scales_mm: tuple[float, ...] = PE_SCALES_MM,
    axis_offsets: tuple[float, ...] = PE_AXIS_OFFSETS,
) -> np.ndarray:
    """Expand one embolism candidate into 3 scales x 3 axis shifts x 6 rotations.

    ``pair_stack`` holds the 6 rotational variants of the 2-channel
    (cross-sectional, longitudinal) source window; rotation around the
    vessel axis is the provider's job.  Every output patch is 3-channel:
    the second channel is repeated to fill the color slot.
    """
    pair_stack = as_tensor(pair_stack)
    if pair_stack.ndim != 4 or pair_stack.shape[0] != PE_ROTATIONS:
        raise AugmentationError(
            f"expected a ({PE_ROTATIONS}, 2, H, W) rotation stack, got {pair_stack.shape}"
        )
    if pair_stack.shape[1] != 2:
        raise AugmentationError(
            f"source patches must have 2 channels, got {pair_stack.shape[1]}"
        )
    axis = np.asarray(vessel_axis, dtype=float)
    norm = float(np.hypot(*axis))
    if norm == 0.0:
        raise AugmentationError("vessel axis must be a nonzero direction")
    axis /= norm
    cx, cy = center
    patches = []
    for scale_mm in scales_mm:
        side = scale_mm / mm_per_px
        for off in axis_offsets:
            ox = cx + off * side * axis[0]
            oy = cy + off * side * axis[1]
            rect = (ox - side / 2.0, oy - side / 2.0, side, side)
            for r in range(PE_ROTATIONS):
                crop = bilinear_crop(pair_stack[r], rect, (out_size, out_size))
                patches.append(np.stack([crop[0], crop[1], crop[1]]))
    return np.stack(patches)


def augment_frame(
    frame: np.ndarray, n: int, crop_size: int, seed: int
) -> np.ndarray:
    """n uniformly random crop_size x crop_size crops; seed-deterministic."""
    frame = as_tensor(frame)
    if frame.ndim != 3:
        raise AugmentationError(f"expected a (C, H, W) frame, got {frame.shape}")
    _, h, w = frame.shape
    if crop_size > h or crop_size > w:
        raise AugmentationError(f"crop size {crop_size} exceeds frame extents {h}x{w}")
    rng = np.random.default_rng(seed)
    ys = rng.integers(0, h - crop_size + 1, size=n)
    xs = rng.integers(0, w - crop_size + 1, size=n)
    return np.stack(
        [frame[:, y : y + crop_size, x : x + crop_size] for y, x in zip(ys, xs)]
    )


def extract_interface_patches(
    roi: np.ndarray,
    interfaces: BoundaryPair,
    counts: tuple[int, int, int],
    patch_size: int,
    seed: int,
    d_far: float = D_FAR_DEFAULT,
    unit_id=0,
    group_offset: int = 0,
) -> LabeledPatchSet:
    """3-class patch extraction from one ROI.

    ``counts`` is (background, lumen-intima, media-adventitia).  Positive
    patches are centered on interface pixels (no translation augmentation);
    background centers keep a vertical distance of at least ``d_far`` pixels
    from both interfaces.  Grayscale input is repeated over 3 channels.
    """
    roi = as_tensor(roi)
    if roi.ndim != 2:
        raise ExtractionError(f"ROI must be a (H, W) grayscale image, got {roi.shape}")
    h, w = roi.shape
    if interfaces.width != w:
        raise ExtractionError("interfaces must define one row per ROI column")
    half = patch_size // 2
    r_lo, r_hi = half, h - patch_size + half      # inclusive valid center rows
    c_lo, c_hi = half, w - patch_size + half
    if r_lo > r_hi or c_lo > c_hi:
        raise ExtractionError(f"ROI {h}x{w} too small for {patch_size}-pixel patches")
    rng = np.random.default_rng(seed)
    n_bg, n_li, n_ma = counts

    centers: list[tuple[int, int]] = []
    labels: list[int] = []
    for label, n_wanted, y in ((1, n_li, interfaces.y_li), (2, n_ma, interfaces.y_ma)):
        if n_wanted == 0:
            continue
        cols = [c for c in range(c_lo, c_hi + 1) if r_lo <= round(y[c]) <= r_hi]
        if not cols:
            raise ExtractionError(f"no column allows a class-{label} patch")
        pick = rng.choice(len(cols), size=n_wanted, replace=n_wanted > len(cols))
        for i in np.sort(pick):
            c = cols[i]
            centers.append((int(round(y[c])), c))
            labels.append(label)
    got = 0
    attempts = 0
    while got < n_bg:
        attempts += 1
        if attempts > max(1000, 200 * n_bg):
            raise ExtractionError(
                f"could not place {n_bg} background patches at distance {d_far}"
            )
        r = int(rng.integers(r_lo, r_hi + 1))
        c = int(rng.integers(c_lo, c_hi + 1))
        if abs(r - interfaces.y_li[c]) >= d_far and abs(r - interfaces.y_ma[c]) >= d_far:
            centers.append((r, c))
            labels.append(0)
            got += 1

    patches = np.empty((len(centers), 3, patch_size, patch_size))
    for i, (r, c) in enumerate(centers):
        window = roi[r - half : r - half + patch_size, c - half : c - half + patch_size]
        patches[i] = window[None, :, :]  # gray channel repeated thrice
    return LabeledPatchSet(
        patches=patches,
        labels=np.asarray(labels),
        group_ids=[group_offset + i for i in range(len(centers))],
        unit_ids=[unit_id] * len(centers),
        lesion_ids=None,
    )
