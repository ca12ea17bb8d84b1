"""Network snapshots: per-layer tensors plus a JSON metadata header.

A checkpoint directory holds ``meta.json`` (architecture table text, its
fingerprint, class count, iteration t, epoch, validation AUC) and one
``.npy`` file per weight/bias tensor.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ConfigError
from .nn import (
    ArchitectureSpec,
    NetworkState,
    Param,
    load_architecture,
    spec_fingerprint,
    spec_to_text,
)
from .tensor import load_tensor, save_tensor


def save_checkpoint(
    directory: str | Path,
    net: NetworkState,
    spec: ArchitectureSpec,
    iteration: int = 0,
    epoch: int = 0,
    val_auc: float | None = None,
) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": "ftcnn-checkpoint-1",
        "arch": spec_to_text(spec),
        "spec_hash": spec_fingerprint(spec),
        "classes": spec.class_count(),
        "layers": net.layer_names(),
        "iteration": int(iteration),
        "epoch": int(epoch),
        "val_auc": None if val_auc is None else float(val_auc),
    }
    with open(directory / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    for name, p in net.layers.items():
        save_tensor(directory / f"{name}.w.npy", p.w)
        save_tensor(directory / f"{name}.b.npy", p.b)


def load_checkpoint(directory: str | Path) -> tuple[NetworkState, ArchitectureSpec, dict]:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise ConfigError(f"no checkpoint at {directory} (missing meta.json)")
    with open(meta_path) as fh:
        meta = json.load(fh)
    spec = load_architecture(meta["arch"])
    if spec_fingerprint(spec) != meta["spec_hash"]:
        raise ConfigError(f"checkpoint {directory} has a corrupted architecture header")
    layers = {}
    for name in meta["layers"]:
        layers[name] = Param(
            w=load_tensor(directory / f"{name}.w.npy"),
            b=load_tensor(directory / f"{name}.b.npy"),
        )
    return NetworkState(layers), spec, meta
