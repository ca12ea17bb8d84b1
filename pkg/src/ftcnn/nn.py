"""Network assembly, forward inference, loss, and hand-derived backprop.

Networks are described by an ordered layer table (kind, input, kernel,
stride, pad, output).  ReLU is inserted implicitly after every convolution
and after every fully-connected layer except the last one, and a softmax
head is appended, unless the table spells those rows out itself.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels, optim
from .errors import ArchitectureError, InferenceError
from .tensor import DTYPE, as_tensor, zeros

KINDS = ("input", "convolution", "max-pool", "fully-connected", "relu", "softmax")
TRAINABLE_KINDS = ("convolution", "fully-connected")

_KIND_ALIASES = {
    "input": "input",
    "convolution": "convolution",
    "max-pool": "max-pool",
    "max pooling": "max-pool",
    "fully-connected": "fully-connected",
    "fully connected": "fully-connected",
    "relu": "relu",
    "softmax": "softmax",
}

PROB_FLOOR = 1e-12  # loss clamp so a zero true-class probability stays finite


@dataclass(frozen=True)
class LayerRow:
    name: str
    kind: str
    in_shape: tuple[int, ...]
    kernel: tuple[int, int] | None = None
    stride: int | None = None
    pad: int | None = None
    out_channels: int | None = None


@dataclass(frozen=True)
class ArchitectureSpec:
    rows: tuple[LayerRow, ...]

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.rows[0].in_shape

    def trainable_names(self) -> list[str]:
        return [r.name for r in self.rows if r.kind in TRAINABLE_KINDS]

    def row(self, name: str) -> LayerRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise ArchitectureError(f"no layer named {name!r}")

    def class_count(self) -> int:
        last = [r for r in self.rows if r.kind in TRAINABLE_KINDS][-1]
        return int(last.out_channels)


def infer_shapes(spec: ArchitectureSpec) -> list[tuple[int, ...]]:
    """Output shape of every row, using floor((in + 2*pad - k)/stride) + 1."""
    outs: list[tuple[int, ...]] = []
    if not spec.rows:
        raise ArchitectureError("architecture has no rows")
    cur = spec.rows[0].in_shape
    for row in spec.rows:
        if row.kind == "input":
            out = row.in_shape
        elif row.kind in ("convolution", "max-pool"):
            out = _conv_like_out(row, cur)
        elif row.kind == "fully-connected":
            if row.out_channels is None or row.out_channels < 1:
                raise ArchitectureError(f"{row.name}: fully-connected needs a positive output size")
            out = (int(row.out_channels), 1)
        elif row.kind in ("relu", "softmax"):
            out = cur
        else:
            raise ArchitectureError(f"{row.name}: unknown layer kind {row.kind!r}")
        outs.append(out)
        cur = out
    return outs


def _conv_like_out(row: LayerRow, cur: tuple[int, ...]) -> tuple[int, ...]:
    if len(row.in_shape) != 3:
        raise ArchitectureError(f"{row.name}: expected a (C, H, W) input, got {row.in_shape}")
    if row.kernel is None or row.stride is None:
        raise ArchitectureError(f"{row.name}: kernel and stride are required")
    pad = 0 if row.pad is None else int(row.pad)
    c, h, w = row.in_shape
    kh, kw = row.kernel
    oh = (h + 2 * pad - kh) // row.stride + 1
    ow = (w + 2 * pad - kw) // row.stride + 1
    if h + 2 * pad - kh < 0 or w + 2 * pad - kw < 0 or oh < 1 or ow < 1:
        raise ArchitectureError(
            f"{row.name}: kernel {row.kernel} does not fit input {row.in_shape} with pad {pad}"
        )
    if row.kind == "convolution":
        if row.out_channels is None or row.out_channels < 1:
            raise ArchitectureError(f"{row.name}: convolution needs a positive kernel count")
        return (int(row.out_channels), oh, ow)
    return (c, oh, ow)


def validate_spec(spec: ArchitectureSpec) -> None:
    if not spec.rows:
        raise ArchitectureError("architecture has no rows")
    if spec.rows[0].kind != "input":
        raise ArchitectureError("first row must be the input row")
    names = [r.name for r in spec.rows]
    if len(set(names)) != len(names):
        raise ArchitectureError("layer names must be unique")
    outs = infer_shapes(spec)
    for prev_out, row in zip(outs, spec.rows[1:]):
        expect = prev_out
        if row.kind == "fully-connected":
            # A dense layer flattens whatever precedes it.
            if math.prod(row.in_shape) != math.prod(prev_out):
                raise ArchitectureError(
                    f"{row.name}: input {row.in_shape} does not match previous output {prev_out}"
                )
        elif row.in_shape != expect:
            raise ArchitectureError(
                f"{row.name}: input {row.in_shape} does not match previous output {expect}"
            )
    trainable = [r for r in spec.rows if r.kind in TRAINABLE_KINDS]
    if not trainable:
        raise ArchitectureError("architecture has no trainable layers")
    if trainable[-1].kind != "fully-connected":
        raise ArchitectureError("last trainable layer must be fully-connected")


# ---------------------------------------------------------------------------
# Table parsing

def load_architecture(source: str | Path, classes: int | None = None) -> ArchitectureSpec:
    """Parse a layer table with columns layer/type/input/kernel/stride/pad/output.

    ``source`` is a path or the table text itself.  Columns are separated by
    pipes or whitespace; a literal ``C`` in the output column is replaced by
    ``classes``.  The output column is validated against infer_shapes.
    """
    text = str(source)
    if "\n" not in text and Path(text).exists():
        text = Path(text).read_text()
    rows = []
    declared_outs = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        cells = _split_table_line(line)
        if cells[0].lower() == "layer":
            continue  # header row
        if len(cells) != 7:
            raise ArchitectureError(f"expected 7 columns, got {len(cells)}: {line!r}")
        name, kind_raw, in_raw, kernel_raw, stride_raw, pad_raw, out_raw = cells
        kind = _KIND_ALIASES.get(kind_raw.lower())
        if kind is None:
            raise ArchitectureError(f"{name}: unknown layer type {kind_raw!r}")
        in_shape = _parse_shape(in_raw, classes, name)
        out_shape = None if out_raw.upper() in ("N/A", "-") else _parse_shape(out_raw, classes, name)
        kernel = _parse_kernel(kernel_raw, name)
        stride = _parse_int(stride_raw)
        pad = _parse_int(pad_raw)
        out_channels = None
        if kind in TRAINABLE_KINDS:
            if out_shape is None:
                raise ArchitectureError(f"{name}: trainable rows need an output column")
            out_channels = out_shape[0]
        rows.append(
            LayerRow(
                name=name,
                kind=kind,
                in_shape=in_shape,
                kernel=kernel,
                stride=stride,
                pad=pad,
                out_channels=out_channels,
            )
        )
        declared_outs.append(out_shape)
    spec = ArchitectureSpec(rows=tuple(rows))
    validate_spec(spec)
    inferred = infer_shapes(spec)
    for row, declared, got in zip(spec.rows, declared_outs, inferred):
        if declared is not None and tuple(declared) != tuple(got):
            raise ArchitectureError(
                f"{row.name}: declared output {declared} but inferred {got}"
            )
    return spec


def spec_to_text(spec: ArchitectureSpec) -> str:
    """Serialize back to the 7-column table format (round-trips via load_architecture)."""
    outs = infer_shapes(spec)
    lines = ["layer | type | input | kernel | stride | pad | output"]
    for row, out in zip(spec.rows, outs):
        kernel = "N/A" if row.kernel is None else f"{row.kernel[0]}x{row.kernel[1]}"
        stride = "N/A" if row.stride is None else str(row.stride)
        pad = "N/A" if row.pad is None else str(row.pad)
        lines.append(
            f"{row.name} | {row.kind} | {_shape_str(row.in_shape)} | "
            f"{kernel} | {stride} | {pad} | {_shape_str(out)}"
        )
    return "\n".join(lines) + "\n"


def spec_fingerprint(spec: ArchitectureSpec) -> str:
    return hashlib.sha256(spec_to_text(spec).encode()).hexdigest()[:16]


def _split_table_line(line: str) -> list[str]:
    if "|" in line:
        return [c.strip() for c in line.split("|")]
    tokens = line.split()
    # Re-join the two-word type names used by the classic table layout.
    merged: list[str] = []
    i = 0
    while i < len(tokens):
        pair = " ".join(tokens[i : i + 2]).lower()
        if len(merged) == 1 and pair in _KIND_ALIASES:
            merged.append(pair)
            i += 2
        else:
            merged.append(tokens[i])
            i += 1
    return merged


def _shape_str(shape: Sequence[int]) -> str:
    return "x".join(str(int(e)) for e in shape)


def _parse_shape(raw: str, classes: int | None, name: str) -> tuple[int, ...]:
    parts = raw.lower().split("x")
    out = []
    for p in parts:
        p = p.strip()
        if p == "c":
            if classes is None:
                raise ArchitectureError(f"{name}: table uses a class-count placeholder; pass classes=")
            out.append(int(classes))
        else:
            try:
                out.append(int(p))
            except ValueError as exc:
                raise ArchitectureError(f"{name}: bad shape {raw!r}") from exc
    return tuple(out)


def _parse_kernel(raw: str, name: str) -> tuple[int, int] | None:
    if raw.upper() in ("N/A", "-"):
        return None
    parts = raw.lower().split("x")
    if len(parts) != 2:
        raise ArchitectureError(f"{name}: bad kernel {raw!r}")
    return (int(parts[0]), int(parts[1]))


def _parse_int(raw: str) -> int | None:
    if raw.upper() in ("N/A", "-"):
        return None
    return int(raw)


# ---------------------------------------------------------------------------
# Parameters and execution plan

@dataclass
class Param:
    w: np.ndarray
    b: np.ndarray

    def copy(self) -> "Param":
        return Param(self.w.copy(), self.b.copy())


class NetworkState:
    """Ordered per-layer weights and biases."""

    def __init__(self, layers: dict[str, Param]):
        self.layers = dict(layers)

    def layer_names(self) -> list[str]:
        return list(self.layers)

    def copy(self) -> "NetworkState":
        return NetworkState({k: p.copy() for k, p in self.layers.items()})

    def parameter_count(self) -> int:
        return sum(p.w.size + p.b.size for p in self.layers.values())


Gradients = dict[str, Param]


def weight_shape(row: LayerRow, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    if row.kind == "convolution":
        c = in_shape[0]
        return (int(row.out_channels), c, row.kernel[0], row.kernel[1])
    if row.kind == "fully-connected":
        return (int(row.out_channels), int(math.prod(in_shape)))
    raise ArchitectureError(f"{row.name}: layer kind {row.kind!r} has no weights")


def build_network(
    spec: ArchitectureSpec, init: str = "gaussian", seed: int | np.random.Generator = 0
) -> NetworkState:
    """Allocate and initialize all trainable layers; deterministic for a fixed seed."""
    validate_spec(spec)
    rng = optim.rng_from(seed)
    outs = infer_shapes(spec)
    ins = [spec.rows[0].in_shape] + outs[:-1]
    layers: dict[str, Param] = {}
    for row, in_shape in zip(spec.rows, ins):
        if row.kind not in TRAINABLE_KINDS:
            continue
        wshape = weight_shape(row, in_shape)
        w = optim.init_weights(wshape, init, rng)
        b = zeros((int(row.out_channels),))
        layers[row.name] = Param(w, b)
    return NetworkState(layers)


@dataclass(frozen=True)
class _Op:
    name: str
    kind: str
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    kernel: tuple[int, int] | None = None
    stride: int | None = None
    pad: int | None = None


def network_ops(spec: ArchitectureSpec) -> tuple[_Op, ...]:
    """Execution plan: table rows plus implicit relu/softmax where needed."""
    validate_spec(spec)
    outs = infer_shapes(spec)
    has_explicit_relu = any(r.kind == "relu" for r in spec.rows)
    has_softmax = any(r.kind == "softmax" for r in spec.rows)
    last_fc = [r.name for r in spec.rows if r.kind in TRAINABLE_KINDS][-1]
    ops: list[_Op] = []
    cur = spec.rows[0].in_shape
    for row, out in zip(spec.rows, outs):
        if row.kind == "input":
            cur = out
            continue
        ops.append(
            _Op(row.name, row.kind, cur, out, kernel=row.kernel, stride=row.stride, pad=row.pad)
        )
        cur = out
        wants_relu = (
            not has_explicit_relu
            and (row.kind == "convolution" or (row.kind == "fully-connected" and row.name != last_fc))
        )
        if wants_relu:
            ops.append(_Op(f"{row.name}.relu", "relu", cur, cur))
    if not has_softmax:
        ops.append(_Op("softmax", "softmax", cur, cur))
    return tuple(ops)


# ---------------------------------------------------------------------------
# Forward / loss / backward

@dataclass
class ForwardTrace:
    """Per-op activations from one forward pass.

    ``activations[i]`` is the input to ``ops[i]``; the final entry holds the
    softmax class probabilities.
    """

    ops: tuple[_Op, ...]
    activations: list[np.ndarray]
    pool_indices: dict[int, np.ndarray]
    probs: np.ndarray


def forward(net: NetworkState, spec: ArchitectureSpec, batch: np.ndarray) -> ForwardTrace:
    batch = as_tensor(batch)
    if batch.ndim != 4 or tuple(batch.shape[1:]) != tuple(spec.input_shape):
        raise InferenceError(
            f"batch shape {batch.shape} does not match input row {spec.input_shape}"
        )
    ops = network_ops(spec)
    acts = [batch]
    pool_indices: dict[int, np.ndarray] = {}
    x = batch
    for i, op in enumerate(ops):
        if op.kind == "convolution":
            p = net.layers[op.name]
            xp = _pad_batch(x, op.pad, 0.0)
            x = kernels.conv2d_forward(xp, p.w, p.b, int(op.stride))
        elif op.kind == "max-pool":
            xp = _pad_batch(x, op.pad, -np.inf)
            x, idx = kernels.maxpool_forward(xp, op.kernel[0], op.kernel[1], int(op.stride))
            pool_indices[i] = idx
        elif op.kind == "relu":
            x = np.maximum(x, 0.0)
        elif op.kind == "fully-connected":
            p = net.layers[op.name]
            x = x.reshape(x.shape[0], -1) @ p.w.T + p.b
        elif op.kind == "softmax":
            x = softmax(x)
        else:  # pragma: no cover - excluded by validate_spec
            raise InferenceError(f"cannot execute layer kind {op.kind!r}")
        acts.append(x)
    return ForwardTrace(ops=ops, activations=acts, pool_indices=pool_indices, probs=acts[-1])


def predict_probs(
    net: NetworkState, spec: ArchitectureSpec, patches: np.ndarray, batch_size: int = 512
) -> np.ndarray:
    """Class probabilities for a stack of patches, evaluated in batches."""
    patches = as_tensor(patches)
    out = np.empty((patches.shape[0], spec.class_count()), dtype=DTYPE)
    for start in range(0, patches.shape[0], batch_size):
        stop = min(start + batch_size, patches.shape[0])
        out[start:stop] = forward(net, spec, np.ascontiguousarray(patches[start:stop])).probs
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by max subtraction."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_loss(probs: np.ndarray, labels: Sequence[int]) -> float:
    """Mean negative log of the true-class probability over the batch."""
    probs = np.asarray(probs, dtype=DTYPE)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise InferenceError(f"probs {probs.shape} incompatible with labels {labels.shape}")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise InferenceError("labels out of range")
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-9, rtol=0.0):
        raise InferenceError("probability rows must sum to 1 within 1e-9")
    p = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(p, PROB_FLOOR)).mean())


def backward(
    net: NetworkState, spec: ArchitectureSpec, trace: ForwardTrace, labels: Sequence[int]
) -> Gradients:
    """Gradients of the cross-entropy loss w.r.t. every weight and bias."""
    labels = np.asarray(labels, dtype=np.int64)
    ops = trace.ops
    if ops != network_ops(spec) or len(trace.activations) != len(ops) + 1:
        raise InferenceError("trace does not belong to this spec")
    batch_size = trace.activations[0].shape[0]
    if labels.shape != (batch_size,):
        raise InferenceError(f"expected {batch_size} labels, got {labels.shape}")
    if ops[-1].kind != "softmax":
        raise InferenceError("network must end in a softmax layer")

    grads: Gradients = {}
    probs = trace.probs
    onehot = np.zeros_like(probs)
    onehot[np.arange(batch_size), labels] = 1.0
    g = (probs - onehot) / batch_size  # d(loss)/d(logits), softmax folded in
    for i in range(len(ops) - 2, -1, -1):
        op = ops[i]
        x = trace.activations[i]
        if op.kind == "fully-connected":
            p = net.layers[op.name]
            flat = x.reshape(batch_size, -1)
            grads[op.name] = Param(g.T @ flat, g.sum(axis=0))
            g = (g @ p.w).reshape(x.shape)
        elif op.kind == "relu":
            g = g * (x > 0)
        elif op.kind == "max-pool":
            pad = int(op.pad or 0)
            h, w = x.shape[2] + 2 * pad, x.shape[3] + 2 * pad
            g = kernels.maxpool_backward(
                np.ascontiguousarray(g), trace.pool_indices[i],
                op.kernel[0], op.kernel[1], int(op.stride), h, w,
            )
            g = _crop_batch(g, pad)
        elif op.kind == "convolution":
            p = net.layers[op.name]
            pad = int(op.pad or 0)
            xp = _pad_batch(x, pad, 0.0)
            gx, gw, gb = kernels.conv2d_backward(xp, p.w, np.ascontiguousarray(g), int(op.stride))
            grads[op.name] = Param(gw, gb)
            g = _crop_batch(gx, pad)
        else:  # pragma: no cover
            raise InferenceError(f"cannot differentiate layer kind {op.kind!r}")
    return {name: grads[name] for name in net.layers}


def _pad_batch(x: np.ndarray, pad: int | None, fill: float) -> np.ndarray:
    pad = int(pad or 0)
    if pad == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=fill)


def _crop_batch(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return x[:, :, pad:-pad, pad:-pad]
