"""Minimal 8-bit binary PGM (P5) and PPM (P6) readers/writers.

Pixel values map to floats in [0, 1]: grayscale images load as (H, W),
color images as (3, H, W).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import ShapeError
from ..tensor import as_tensor


def read_pnm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, fields, offset = _parse_header(raw)
    width, height, maxval = fields
    if maxval != 255:
        raise ShapeError(f"only 8-bit images are supported, got maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    data = np.frombuffer(raw, dtype=np.uint8, count=width * height * channels, offset=offset)
    if data.size != width * height * channels:
        raise ShapeError(f"truncated pixel data in {path}")
    img = data.astype(np.float64) / 255.0
    if channels == 1:
        return img.reshape(height, width)
    return np.ascontiguousarray(img.reshape(height, width, 3).transpose(2, 0, 1))


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write a (H, W) array in [0, 1] as an 8-bit binary PGM."""
    image = as_tensor(image)
    if image.ndim != 2:
        raise ShapeError(f"PGM wants a (H, W) image, got {image.shape}")
    _write(path, b"P5", image[None])


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Write a (3, H, W) array in [0, 1] as an 8-bit binary PPM."""
    image = as_tensor(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"PPM wants a (3, H, W) image, got {image.shape}")
    _write(path, b"P6", image)


def _write(path: str | Path, magic: bytes, planes: np.ndarray) -> None:
    _, h, w = planes.shape
    bytes_ = np.clip(np.rint(planes * 255.0), 0, 255).astype(np.uint8)
    interleaved = np.ascontiguousarray(bytes_.transpose(1, 2, 0))
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(interleaved.tobytes())


def _parse_header(raw: bytes) -> tuple[bytes, tuple[int, int, int], int]:
    if raw[:2] not in (b"P5", b"P6"):
        raise ShapeError(f"not a binary PGM/PPM file (magic {raw[:2]!r})")
    magic = raw[:2]
    fields: list[int] = []
    i = 2
    while len(fields) < 3:
        if i >= len(raw):
            raise ShapeError("truncated PNM header")
        ch = raw[i : i + 1]
        if ch == b"#":
            while i < len(raw) and raw[i : i + 1] != b"\n":
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(raw) and not raw[j : j + 1].isspace():
                j += 1
            fields.append(int(raw[i:j]))
            i = j
    return magic, (fields[0], fields[1], fields[2]), i + 1
