"""Numpy reference implementation of the hot kernels.

These are the pure-Python fallbacks selected at import when the compiled
extension is unavailable (see ``ftcnn.kernels``).  Semantics are identical
to the compiled kernels; floating-point results may differ from them at
the level of summation reordering (~1e-15 relative).

All convolutions are "valid": the caller applies zero padding beforehand.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    """Cross-correlate x (B,C,H,W) with kernels w (O,C,kh,kw) plus bias b (O,)."""
    kh, kw = w.shape[2], w.shape[3]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    y = np.einsum("bcijuv,ocuv->boij", win, w, optimize=True)
    y += b[None, :, None, None]
    return np.ascontiguousarray(y)


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, gy: np.ndarray, stride: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward w.r.t. input, weights, and bias."""
    kh, kw = w.shape[2], w.shape[3]
    oh, ow = gy.shape[2], gy.shape[3]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    gw = np.einsum("boij,bcijuv->ocuv", gy, win, optimize=True)
    gb = gy.sum(axis=(0, 2, 3))
    gx = np.zeros_like(x)
    # Scatter-add per kernel offset; kh*kw iterations keep this vectorized.
    for u in range(kh):
        for v in range(kw):
            patch = np.einsum("boij,oc->bcij", gy, w[:, :, u, v], optimize=True)
            gx[:, :, u : u + oh * stride : stride, v : v + ow * stride : stride] += patch
    return gx, np.ascontiguousarray(gw), np.ascontiguousarray(gb)


def maxpool_forward(
    x: np.ndarray, kh: int, kw: int, stride: int
) -> tuple[np.ndarray, np.ndarray]:
    """Max pooling over (kh, kw) windows.

    Returns the pooled map and the flat in-window argmax (row-major within
    the window, first maximum wins) needed for the backward pass.
    """
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(win.shape[:4] + (kh * kw,))
    idx = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx.astype(np.int64)


def maxpool_backward(
    gy: np.ndarray, idx: np.ndarray, kh: int, kw: int, stride: int, h: int, w: int
) -> np.ndarray:
    """Scatter pooled gradients back to the argmax positions."""
    bsz, c, oh, ow = gy.shape
    rows = (np.arange(oh) * stride)[None, None, :, None] + idx // kw
    cols = (np.arange(ow) * stride)[None, None, None, :] + idx % kw
    plane = (np.arange(bsz * c) * (h * w)).reshape(bsz, c, 1, 1)
    flat_index = (plane + rows * w + cols).ravel()
    gx = np.zeros(bsz * c * h * w, dtype=gy.dtype)
    np.add.at(gx, flat_index, gy.ravel())
    return gx.reshape(bsz, c, h, w)
