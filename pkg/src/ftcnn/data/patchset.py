"""Labeled patch sets with candidate/unit structure, sampling, and aggregation.

Every patch carries a group id (the candidate or frame it was augmented
from) and a unit id (the video/volume/ROI it came from).  Groups drive
test-time score averaging; units drive leakage-free splits and unit-level
training-set reductions.  Positive groups may additionally carry a lesion
id, which FROC analysis counts detections against.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import AggregationError, SamplingError, ShapeError, SplitError
from ..tensor import as_tensor, load_tensor, save_tensor


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ShapeError(f"bounding box extents must be positive, got {self.w}x{self.h}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)


@dataclass
class LabeledPatchSet:
    patches: np.ndarray        # (N, C, H, W)
    labels: np.ndarray         # (N,) class indices
    group_ids: list
    unit_ids: list
    lesion_ids: list | None = None  # per patch; None on negative groups

    def __post_init__(self):
        self.patches = as_tensor(self.patches)
        if self.patches.ndim != 4:
            raise ShapeError(f"patches must be (N, C, H, W), got {self.patches.shape}")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.patches)
        if len(self.labels) != n or len(self.group_ids) != n or len(self.unit_ids) != n:
            raise ShapeError("labels, group_ids, and unit_ids must match the patch count")
        if self.lesion_ids is None:
            self.lesion_ids = [None] * n
        if len(self.lesion_ids) != n:
            raise ShapeError("lesion_ids must match the patch count")
        for lab, les in zip(self.labels, self.lesion_ids):
            if les is not None and lab == 0:
                raise ShapeError("lesion ids are only meaningful on positive patches")

    def __len__(self) -> int:
        return len(self.patches)

    def subset(self, indices) -> "LabeledPatchSet":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledPatchSet(
            patches=self.patches[idx],
            labels=self.labels[idx],
            group_ids=[self.group_ids[i] for i in idx],
            unit_ids=[self.unit_ids[i] for i in idx],
            lesion_ids=[self.lesion_ids[i] for i in idx],
        )

    def class_histogram(self) -> dict[int, int]:
        vals, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}

    def units(self) -> list:
        """Distinct unit ids in first-appearance order."""
        seen: dict = {}
        for u in self.unit_ids:
            seen.setdefault(u, None)
        return list(seen)

    def restrict_units(self, keep) -> "LabeledPatchSet":
        keep = set(keep)
        idx = [i for i, u in enumerate(self.unit_ids) if u in keep]
        return self.subset(idx)


def concat_patchsets(sets: Sequence[LabeledPatchSet]) -> LabeledPatchSet:
    sets = list(sets)
    return LabeledPatchSet(
        patches=np.concatenate([s.patches for s in sets]),
        labels=np.concatenate([s.labels for s in sets]),
        group_ids=[g for s in sets for g in s.group_ids],
        unit_ids=[u for s in sets for u in s.unit_ids],
        lesion_ids=[l for s in sets for l in s.lesion_ids],
    )


def stratify(pset: LabeledPatchSet, target_size: int, seed: int) -> LabeledPatchSet:
    """Class-balanced subsample: every class is downsampled to the same count.

    The minority class is kept whole when it bounds the request.  Raises
    SamplingError when the target cannot be met with equal representation.
    """
    hist = pset.class_histogram()
    n_classes = len(hist)
    if n_classes < 2:
        raise SamplingError("stratification needs at least two classes")
    if target_size < n_classes or target_size % n_classes != 0:
        raise SamplingError(
            f"target size {target_size} cannot be split evenly over {n_classes} classes"
        )
    per_class = target_size // n_classes
    short = {c: n for c, n in hist.items() if n < per_class}
    if short:
        raise SamplingError(f"cannot balance: classes {short} have fewer than {per_class} patches")
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for cls in sorted(hist):
        members = np.flatnonzero(pset.labels == cls)
        pick = rng.permutation(len(members))[:per_class]
        chosen.extend(members[np.sort(pick)])
    return pset.subset(sorted(chosen))


def split_train_val(
    pset: LabeledPatchSet, fraction: float = 0.8, seed: int = 0
) -> tuple[LabeledPatchSet, LabeledPatchSet]:
    """Unit-level split: no unit id ever straddles both sides."""
    if not 0.0 < fraction < 1.0:
        raise SplitError(f"fraction must be in (0, 1), got {fraction}")
    units = pset.units()
    if len(units) < 2:
        raise SplitError("need at least two units to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(units))
    n_train = int(round(fraction * len(units)))
    n_train = min(max(n_train, 1), len(units) - 1)
    train_units = {units[i] for i in order[:n_train]}
    train_idx = [i for i, u in enumerate(pset.unit_ids) if u in train_units]
    val_idx = [i for i, u in enumerate(pset.unit_ids) if u not in train_units]
    return pset.subset(train_idx), pset.subset(val_idx)


@dataclass(frozen=True)
class GroupRecord:
    group_id: object
    unit_id: object
    lesion_id: object
    mean_score: float
    label: int


def aggregate_groups(scores: Sequence[float], pset: LabeledPatchSet) -> list[GroupRecord]:
    """Average per-patch scores at the candidate (group) level."""
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (len(pset),):
        raise AggregationError(
            f"expected one score per patch ({len(pset)}), got {scores.shape}"
        )
    order: dict = {}
    for i, gid in enumerate(pset.group_ids):
        order.setdefault(gid, []).append(i)
    records = []
    for gid, idx in order.items():
        labels = {int(pset.labels[i]) for i in idx}
        units = {pset.unit_ids[i] for i in idx}
        lesions = {pset.lesion_ids[i] for i in idx}
        if len(labels) != 1 or len(units) != 1 or len(lesions) != 1:
            raise AggregationError(f"group {gid!r} mixes labels, units, or lesions")
        records.append(
            GroupRecord(
                group_id=gid,
                unit_id=next(iter(units)),
                lesion_id=next(iter(lesions)),
                mean_score=float(scores[idx].mean()),
                label=next(iter(labels)),
            )
        )
    return records


# ---------------------------------------------------------------------------
# On-disk format: a directory of .npy patches plus a CSV manifest.

_MANIFEST_COLUMNS = ["patchFile", "label", "groupId", "unitId", "lesionId"]


def save_patchset(directory: str | Path, pset: LabeledPatchSet) -> None:
    directory = Path(directory)
    (directory / "patches").mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(len(pset)):
        rel = f"patches/p{i:06d}.npy"
        save_tensor(directory / rel, pset.patches[i])
        lesion = pset.lesion_ids[i]
        rows.append(
            {
                "patchFile": rel,
                "label": int(pset.labels[i]),
                "groupId": _id_str(pset.group_ids[i]),
                "unitId": _id_str(pset.unit_ids[i]),
                "lesionId": "" if lesion is None else _id_str(lesion),
            }
        )
    with open(directory / "manifest.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_MANIFEST_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def load_patchset(directory: str | Path) -> LabeledPatchSet:
    directory = Path(directory)
    patches, labels, groups, units, lesions = [], [], [], [], []
    with open(directory / "manifest.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            patches.append(load_tensor(directory / row["patchFile"]))
            labels.append(int(row["label"]))
            groups.append(_id_parse(row["groupId"]))
            units.append(_id_parse(row["unitId"]))
            lesions.append(None if row["lesionId"] == "" else _id_parse(row["lesionId"]))
    return LabeledPatchSet(
        patches=np.stack(patches),
        labels=np.asarray(labels),
        group_ids=groups,
        unit_ids=units,
        lesion_ids=lesions,
    )


def _id_str(value) -> str:
    return str(value)


def _id_parse(raw: str):
    try:
        return int(raw)
    except ValueError:
        return raw
