"""Datasets: labeled patch sets, augmentation pipelines, sampling, synthetic
generators, and PGM/PPM image ingestion."""

from .augment import (
    augment_frame,
    augment_pe,
    augment_polyp,
    bilinear_crop,
    dihedral_transform,
    extract_interface_patches,
)
from .patchset import (
    BoundingBox,
    GroupRecord,
    LabeledPatchSet,
    aggregate_groups,
    concat_patchsets,
    load_patchset,
    save_patchset,
    split_train_val,
    stratify,
)
from .pnm import read_pnm, write_pgm, write_ppm
from . import synthetic

__all__ = [
    "BoundingBox",
    "GroupRecord",
    "LabeledPatchSet",
    "aggregate_groups",
    "augment_frame",
    "augment_pe",
    "augment_polyp",
    "bilinear_crop",
    "concat_patchsets",
    "dihedral_transform",
    "extract_interface_patches",
    "load_patchset",
    "read_pnm",
    "save_patchset",
    "split_train_val",
    "stratify",
    "synthetic",
    "write_pgm",
    "write_ppm",
]
