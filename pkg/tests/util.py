"""Shared helpers for the test suite."""

import numpy as np

from ftcnn import nn

ALEXNET_TABLE = """
layer | type            | input     | kernel | stride | pad | output
data  | input           | 3x227x227 | N/A    | N/A    | N/A | 3x227x227
conv1 | convolution     | 3x227x227 | 11x11  | 4      | 0   | 96x55x55
pool1 | max-pool        | 96x55x55  | 3x3    | 2      | 0   | 96x27x27
conv2 | convolution     | 96x27x27  | 5x5    | 1      | 2   | 256x27x27
pool2 | max-pool        | 256x27x27 | 3x3    | 2      | 0   | 256x13x13
conv3 | convolution     | 256x13x13 | 3x3    | 1      | 1   | 384x13x13
conv4 | convolution     | 384x13x13 | 3x3    | 1      | 1   | 384x13x13
conv5 | convolution     | 384x13x13 | 3x3    | 1      | 1   | 256x13x13
pool5 | max-pool        | 256x13x13 | 3x3    | 2      | 0   | 256x6x6
fc6   | fully-connected | 256x6x6   | 6x6    | 1      | 0   | 4096x1
fc7   | fully-connected | 4096x1    | 1x1    | 1      | 0   | 4096x1
fc8   | fully-connected | 4096x1    | 1x1    | 1      | 0   | Cx1
"""

TINY_TABLE = """
layer | type            | input  | kernel | stride | pad | output
data  | input           | 1x8x8  | N/A    | N/A    | N/A | 1x8x8
conv1 | convolution     | 1x8x8  | 3x3    | 1      | 1   | 4x8x8
pool1 | max-pool        | 4x8x8  | 2x2    | 2      | 0   | 4x4x4
conv2 | convolution     | 4x4x4  | 3x3    | 1      | 0   | 6x2x2
fc3   | fully-connected | 6x2x2  | 2x2    | 1      | 0   | 3x1
"""


def alexnet_spec(classes: int = 2) -> nn.ArchitectureSpec:
    return nn.load_architecture(ALEXNET_TABLE, classes=classes)


def tiny_spec() -> nn.ArchitectureSpec:
    return nn.load_architecture(TINY_TABLE)


def brute_force_conv(x, w, b, stride=1, pad=0):
    """Independent sliding-window convolution oracle (direct loops)."""
    bsz, cin, h, wd = x.shape
    out, _, kh, kw = w.shape
    if pad:
        xp = np.zeros((bsz, cin, h + 2 * pad, wd + 2 * pad))
        xp[:, :, pad:-pad, pad:-pad] = x
        x = xp
        h, wd = h + 2 * pad, wd + 2 * pad
    oh = (h - kh) // stride + 1
    ow = (wd - kw) // stride + 1
    y = np.zeros((bsz, out, oh, ow))
    for n in range(bsz):
        for o in range(out):
            for i in range(oh):
                for j in range(ow):
                    acc = b[o]
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += x[n, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    y[n, o, i, j] = acc
    return y
