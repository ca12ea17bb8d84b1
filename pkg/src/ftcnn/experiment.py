"""Config-driven experiment runner.

A run is a sweep over fine-tune plans x training-set fractions x weight
initializers.  Every cell trains with validation-AUC early stopping,
evaluates on a held-out test side, and persists its artifacts (checkpoint,
curve or segmentation CSVs, convergence trace, JSON summary) under its own
subdirectory.  Training-set reductions happen at the unit level, from one
run-wide unit order, so smaller fractions use strict subsets of the units.

All emitted CSV numbers round-trip through repr(), so a rerun with the same
config and seed reproduces them byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from importlib.resources import files
from pathlib import Path

import numpy as np

from . import metrics, nn, optim, segpipe, transfer
from .checkpoint import load_checkpoint, save_checkpoint
from .data.patchset import LabeledPatchSet, aggregate_groups, load_patchset, split_train_val, stratify
from .data.pnm import write_ppm
from .data import synthetic
from .errors import ConfigError, FtcnnError, ReportError
from .metrics import EarlyStopMonitor, merged_binary_scores

EVALUATION_KINDS = ("roc", "froc", "segmentation")


def derive_seed(base: int, *tags) -> int:
    """Stable sub-seed from a base seed and a tag tuple."""
    text = repr((int(base),) + tuple(tags)).encode()
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "big") >> 1


# ---------------------------------------------------------------------------
# Architecture presets

def preset_architecture(name: str, classes: int) -> nn.ArchitectureSpec:
    if name == "alexnet227":
        text = files("ftcnn.resources").joinpath("alexnet227.txt").read_text()
        return nn.load_architecture(text, classes=classes)
    if name == "tiny32":
        return nn.load_architecture(_TINY32 % {"c": classes})
    if name == "patchnet13":
        return nn.load_architecture(_PATCHNET13 % {"c": classes})
    raise ConfigError(f"unknown architecture preset {name!r}")


_TINY32 = """
layer | type            | input   | kernel | stride | pad | output
data  | input           | 1x32x32 | N/A    | N/A    | N/A | 1x32x32
conv1 | convolution     | 1x32x32 | 5x5    | 1      | 0   | 8x28x28
pool1 | max-pool        | 8x28x28 | 2x2    | 2      | 0   | 8x14x14
conv2 | convolution     | 8x14x14 | 5x5    | 1      | 0   | 16x10x10
pool2 | max-pool        | 16x10x10 | 2x2   | 2      | 0   | 16x5x5
fc3   | fully-connected | 16x5x5  | 5x5    | 1      | 0   | 48x1
fc4   | fully-connected | 48x1    | 1x1    | 1      | 0   | %(c)dx1
"""

_PATCHNET13 = """
layer | type            | input   | kernel | stride | pad | output
data  | input           | 3x13x13 | N/A    | N/A    | N/A | 3x13x13
conv1 | convolution     | 3x13x13 | 3x3    | 1      | 0   | 8x11x11
pool1 | max-pool        | 8x11x11 | 2x2    | 2      | 0   | 8x5x5
conv2 | convolution     | 8x5x5   | 3x3    | 1      | 0   | 16x3x3
fc3   | fully-connected | 16x3x3  | 3x3    | 1      | 0   | 32x1
fc4   | fully-connected | 32x1    | 1x1    | 1      | 0   | %(c)dx1
"""


# ---------------------------------------------------------------------------
# Configuration

@dataclass
class ExperimentConfig:
    seed: int
    out_dir: str
    arch: dict
    dataset: dict
    plans: list[str] = field(default_factory=lambda: ["scratch"])
    initializers: list[str] = field(default_factory=lambda: ["gaussian"])
    train_fractions: list[float] = field(default_factory=lambda: [1.0])
    epochs: int = 10
    patience: int = 5
    evaluation: str = "roc"
    operating_points: list[float] = field(default_factory=lambda: [0.1, 0.2, 0.3])
    schedule: dict = field(default_factory=dict)
    stratify_to: int | None = None
    source_checkpoint: str | None = None
    val_fraction: float = 0.8
    batch_size: int = 32
    patch_size: int | None = None  # segmentation: dense-inference patch size
    snake: dict = field(default_factory=dict)   # segpipe.SnakeParams overrides
    curve_interpolation: str = "linear"         # or "step"

    def __post_init__(self):
        if self.evaluation not in EVALUATION_KINDS:
            raise ConfigError(f"evaluation must be one of {EVALUATION_KINDS}")
        if self.curve_interpolation not in ("linear", "step"):
            raise ConfigError("curve_interpolation must be 'linear' or 'step'")
        if any(not 0.0 < f <= 1.0 for f in self.train_fractions):
            raise ConfigError("train fractions must lie in (0, 1]")
        if self.epochs < 1 or self.patience < 0 or self.batch_size < 1:
            raise ConfigError("epochs/patience/batch size out of range")
        needs_source = any(p != "scratch" for p in self.plans)
        if needs_source and not self.source_checkpoint:
            raise ConfigError("fine-tune plans need a source_checkpoint")

    @classmethod
    def from_json(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        raw.update({k: v for k, v in overrides.items() if v is not None})
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"seed", "out_dir", "arch", "dataset"} - set(raw)
        if missing:
            raise ConfigError(f"config is missing required keys: {sorted(missing)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def resolve_architecture(arch: dict, classes: int) -> nn.ArchitectureSpec:
    if "preset" in arch:
        return preset_architecture(arch["preset"], classes)
    if "file" in arch:
        path = Path(arch["file"])
        if not path.exists():
            raise ConfigError(f"architecture file not found: {path}")
        return nn.load_architecture(path.read_text(), classes=classes)
    if "text" in arch:
        return nn.load_architecture(arch["text"], classes=classes)
    raise ConfigError("arch needs one of: preset, file, text")


# ---------------------------------------------------------------------------
# Datasets

@dataclass
class ClassificationData:
    train: LabeledPatchSet
    test: LabeledPatchSet
    classes: int


@dataclass
class SegmentationData:
    train: LabeledPatchSet
    test_rois: list  # (roi, truth BoundaryPair) pairs
    px_to_mm: float
    offset_px: float
    classes: int = 3


def build_dataset(cfg: ExperimentConfig):
    ds = dict(cfg.dataset)
    kind = ds.pop("generator", None)
    seed = derive_seed(cfg.seed, "dataset")
    if kind in ("shapes-source", "shapes-target"):
        make = (
            synthetic.transfer_source_set
            if kind == "shapes-source"
            else synthetic.transfer_target_set
        )
        train_units = int(ds.pop("train_units", 40))
        test_units = int(ds.pop("test_units", 10))
        per_unit = int(ds.pop("per_unit", 25))
        image_size = int(ds.pop("image_size", 32))
        noise = float(ds.pop("noise", 0.2))
        _reject_extras(ds)
        train = make(train_units, per_unit, image_size, noise, seed=seed)
        test = make(test_units, per_unit, image_size, noise, seed=derive_seed(cfg.seed, "dataset", "test"))
        classes = int(train.labels.max()) + 1
        return ClassificationData(train=train, test=test, classes=classes)
    if kind == "cimt":
        train_rois = int(ds.pop("train_rois", 24))
        test_rois = int(ds.pop("test_rois", 20))
        if test_rois < 4:
            raise ConfigError("segmentation runs need >= 4 test ROIs for boxplot stats")
        counts = tuple(ds.pop("counts", (40, 40, 40)))
        patch_size = int(ds.pop("patch_size", 13))
        roi_width = int(ds.pop("roi_width", 92))
        roi_height = int(ds.pop("roi_height", 64))
        offset_px = float(ds.pop("offset_px", 6.0))
        px_to_mm = float(ds.pop("px_to_mm", 0.1))
        noise = float(ds.pop("noise", 0.04))
        _reject_extras(ds)
        train = synthetic.cimt_training_set(
            train_rois, counts, patch_size, seed=seed,
            roi_width=roi_width, roi_height=roi_height,
            offset_px=offset_px, noise=noise,
        )
        rois = synthetic.cimt_test_rois(
            test_rois, seed=derive_seed(cfg.seed, "dataset", "test"),
            roi_width=roi_width, roi_height=roi_height,
            offset_px=offset_px, noise=noise,
        )
        return SegmentationData(train=train, test_rois=rois, px_to_mm=px_to_mm, offset_px=offset_px)
    if "manifest" in ds:
        train_dir = Path(ds.pop("manifest"))
        test_dir = Path(ds.pop("test_manifest", ""))
        for d in (train_dir, test_dir):
            if not (d / "manifest.csv").exists():
                raise ConfigError(f"no patch-set manifest at {d}")
        train = load_patchset(train_dir)
        test = load_patchset(test_dir)
        _reject_extras(ds)
        classes = int(max(train.labels.max(), test.labels.max())) + 1
        return ClassificationData(train=train, test=test, classes=classes)
    raise ConfigError(f"cannot build dataset from {cfg.dataset!r}")


def _reject_extras(ds: dict) -> None:
    if ds:
        raise ConfigError(f"unknown dataset keys: {sorted(ds)}")


# ---------------------------------------------------------------------------
# Training loop

@dataclass
class TrainResult:
    net: nn.NetworkState
    val_trace: list[tuple[int, float]]
    best_epoch: int
    best_val_auc: float
    epochs_run: int
    iterations: int


def train_network(
    net: nn.NetworkState,
    spec: nn.ArchitectureSpec,
    sched: optim.LearningSchedule,
    train_set: LabeledPatchSet,
    val_set: LabeledPatchSet,
    epochs: int,
    patience: int,
    seed: int,
) -> TrainResult:
    """Momentum-SGD training with per-epoch validation AUC and early stopping.

    The returned network is the snapshot from the best validation epoch.
    """
    rng = np.random.default_rng(seed)
    opt = optim.OptimizerState.zeros_like(net)
    monitor = EarlyStopMonitor(patience)
    best = net.copy()
    trace: list[tuple[int, float]] = []
    n = len(train_set)
    batch = sched.batch_size
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        stop_at = n - n % batch if n >= batch else n
        for start in range(0, stop_at, batch):
            idx = order[start : start + batch]
            x = np.ascontiguousarray(train_set.patches[idx])
            y = train_set.labels[idx]
            tr = nn.forward(net, spec, x)
            grads = nn.backward(net, spec, tr, y)
            optim.sgd_step(net, opt, grads, sched)
        probs = nn.predict_probs(net, spec, val_set.patches)
        scores, ybin = merged_binary_scores(probs, val_set.labels)
        val_auc = metrics.auc(metrics.roc_curve(scores, ybin))
        trace.append((epoch, val_auc))
        should_stop = monitor.observe(val_auc)
        if monitor.best_epoch == epoch:
            best = net.copy()
        if should_stop:
            break
    return TrainResult(
        net=best,
        val_trace=trace,
        best_epoch=monitor.best_epoch,
        best_val_auc=monitor.best,
        epochs_run=len(trace),
        iterations=opt.iteration,
    )


# ---------------------------------------------------------------------------
# Sweep runner

@dataclass
class CellResult:
    plan: str
    fraction: float
    init: str
    directory: str
    summary: dict
    error: str | None = None


@dataclass
class RunReport:
    out_dir: str
    cells: list[CellResult]

    @property
    def ok(self) -> bool:
        return all(c.error is None for c in self.cells)


def _cell_slug(plan: str, fraction: float, init: str) -> str:
    safe = plan.replace(":", "_").replace(" ", "-")
    return f"{safe}__f{fraction:g}__{init}"


def run_experiment(config: ExperimentConfig) -> RunReport:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as fh:
        json.dump(config.to_dict(), fh, indent=2)

    data = build_dataset(config)
    units = data.train.units()
    unit_rng = np.random.default_rng(derive_seed(config.seed, "unit-order"))
    unit_order = [units[i] for i in unit_rng.permutation(len(units))]

    source = None
    if config.source_checkpoint:
        source = load_checkpoint(config.source_checkpoint)

    cells: list[CellResult] = []
    for init in config.initializers:
        for fraction in config.train_fractions:
            for plan_name in config.plans:
                slug = _cell_slug(plan_name, fraction, init)
                cell_dir = out / "cells" / slug
                try:
                    summary = _run_cell(
                        config, data, unit_order, source, plan_name, fraction, init, cell_dir
                    )
                    cells.append(CellResult(plan_name, fraction, init, str(cell_dir), summary))
                except FtcnnError as exc:
                    cell_dir.mkdir(parents=True, exist_ok=True)
                    summary = {"plan": plan_name, "fraction": fraction, "init": init,
                               "error": str(exc)}
                    with open(cell_dir / "summary.json", "w") as fh:
                        json.dump(summary, fh, indent=2)
                    cells.append(
                        CellResult(plan_name, fraction, init, str(cell_dir), summary, str(exc))
                    )

    if config.evaluation in ("roc", "froc"):
        _write_significance_matrices(config, out, cells)
    manifest = {
        "cells": [
            {"plan": c.plan, "fraction": c.fraction, "init": c.init,
             "dir": str(Path(c.directory).relative_to(out)), "error": c.error}
            for c in cells
        ],
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return RunReport(out_dir=str(out), cells=cells)


def _run_cell(
    config: ExperimentConfig,
    data,
    unit_order: list,
    source,
    plan_name: str,
    fraction: float,
    init: str,
    cell_dir: Path,
) -> dict:
    cell_dir.mkdir(parents=True, exist_ok=True)
    cell_tag = (plan_name, f"{fraction:g}", init)

    n_units = max(1, int(round(fraction * len(unit_order))))
    if n_units == len(unit_order):
        train_full = data.train  # avoid a full copy at fraction 1.0
    else:
        train_full = data.train.restrict_units(unit_order[:n_units])
    if config.stratify_to is not None:
        train_full = stratify(
            train_full, config.stratify_to, derive_seed(config.seed, "stratify", *cell_tag)
        )
    train_set, val_set = split_train_val(
        train_full, config.val_fraction, derive_seed(config.seed, "split", *cell_tag)
    )

    classes = data.classes
    init_seed = derive_seed(config.seed, "init", *cell_tag)
    if plan_name == "scratch":
        spec = resolve_architecture(config.arch, classes)
        net = nn.build_network(spec, init, init_seed)
    else:
        if source is None:
            raise ConfigError("fine-tune plans need a source checkpoint")
        src_net, src_spec, _ = source
        net, spec = transfer.replace_head(src_net, src_spec, classes, init, init_seed)

    plan = transfer.make_plan(plan_name, spec)
    sched_cfg = dict(config.schedule)
    sched = transfer.plan_schedule(
        plan,
        spec,
        batch_size=config.batch_size,
        epoch_length=max(len(train_set), 1),
        mu=float(sched_cfg.pop("mu", 0.9)),
        gamma=float(sched_cfg.pop("gamma", 0.95)),
        base_alpha=float(sched_cfg.pop("base_alpha", transfer.BASE_ALPHA)),
        head_alpha=float(sched_cfg.pop("head_alpha", transfer.HEAD_ALPHA)),
        bias_rate_multiplier=float(sched_cfg.pop("bias_rate_multiplier", 2.0)),
    )
    _reject_extras(sched_cfg)

    result = train_network(
        net, spec, sched, train_set, val_set,
        epochs=config.epochs, patience=config.patience,
        seed=derive_seed(config.seed, "train", *cell_tag),
    )

    save_checkpoint(
        cell_dir / "checkpoint", result.net, spec,
        iteration=result.iterations, epoch=result.best_epoch, val_auc=result.best_val_auc,
    )
    with open(cell_dir / "convergence.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "valAUC"])
        for epoch, val_auc in result.val_trace:
            writer.writerow([epoch, repr(float(val_auc))])

    summary = {
        "plan": plan_name,
        "fraction": fraction,
        "init": init,
        "train_patches": len(train_set),
        "val_patches": len(val_set),
        "train_units": n_units,
        "best_epoch": result.best_epoch,
        "best_val_auc": result.best_val_auc,
        "epochs_run": result.epochs_run,
        "error": None,
    }
    if config.evaluation in ("roc", "froc"):
        summary.update(_evaluate_classification(config, data, result, spec, cell_dir))
    else:
        summary.update(_evaluate_segmentation(config, data, result, spec, cell_dir))
    with open(cell_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary


def _evaluate_classification(config, data, result, spec, cell_dir: Path) -> dict:
    probs = nn.predict_probs(result.net, spec, data.test.patches)
    scores, _ = merged_binary_scores(probs, data.test.labels)
    records = aggregate_groups(scores, data.test)
    if config.evaluation == "roc":
        curve = metrics.roc_curve(
            [r.mean_score for r in records], [1 if r.label > 0 else 0 for r in records]
        )
    else:
        n_units = len({r.unit_id for r in records})
        curve = metrics.froc_curve(records, n_units)
    metrics.export_curve_csv(cell_dir / "curve.csv", curve)
    metrics.export_curve_svg(cell_dir / "curve.svg", {cell_dir.name: curve})
    out = {"test_groups": len(records)}
    if config.evaluation == "roc":
        out["test_auc"] = metrics.auc(curve)
    return out


def _evaluate_segmentation(config, data, result, spec, cell_dir: Path) -> dict:
    patch_size = config.patch_size or spec.input_shape[1]
    errors_li, errors_ma, thicknesses, argmax_hits = [], [], [], []
    try:
        params = segpipe.SnakeParams(**config.snake)
    except TypeError as exc:
        raise ConfigError(f"bad snake parameters: {exc}") from exc
    rows = []
    for i, (roi, truth) in enumerate(data.test_rois):
        maps = segpipe.infer_confidence_maps(result.net, spec, roi, patch_size)
        step = segpipe.thin_columnwise(maps)
        smooth = segpipe.BoundaryPair(
            y_li=segpipe.snake_smooth(step.y_li, maps.map_li, params),
            y_ma=segpipe.snake_smooth(step.y_ma, maps.map_ma, params),
        )
        err_li, err_ma = segpipe.boundary_error(smooth, truth)
        thickness = segpipe.measure_thickness(smooth, data.px_to_mm)
        errors_li.append(err_li)
        errors_ma.append(err_ma)
        thicknesses.append(thickness.mean_thickness)
        argmax_hits.append(
            float(
                np.mean(
                    [
                        np.mean(np.abs(step.y_li - truth.y_li) <= 2.0),
                        np.mean(np.abs(step.y_ma - truth.y_ma) <= 2.0),
                    ]
                )
            )
        )
        segpipe.export_boundaries_csv(cell_dir / f"boundaries_{i:03d}.csv", smooth, data.px_to_mm)
        if i == 0:  # one color-coded overlay per cell is enough for reports
            write_ppm(cell_dir / "map_merged_000.ppm", segpipe.merged_map_image(maps))
        rows.append([i, repr(err_li), repr(err_ma), repr(thickness.mean_thickness)])
    with open(cell_dir / "errors.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["roi", "errLI", "errMA", "thicknessMm"])
        writer.writerows(rows)
    metrics.export_boxstats_csv(
        cell_dir / "boxplot.csv",
        {
            "lumen-intima": metrics.tukey_box(errors_li),
            "media-adventitia": metrics.tukey_box(errors_ma),
        },
    )
    return {
        "mean_error_li_px": float(np.mean(errors_li)),
        "mean_error_ma_px": float(np.mean(errors_ma)),
        "mean_thickness_mm": float(np.mean(thicknesses)),
        "argmax_within_2px": float(np.mean(argmax_hits)),
        "n_rois": len(data.test_rois),
    }


def _write_significance_matrices(config: ExperimentConfig, out: Path, cells) -> None:
    for init in config.initializers:
        for fraction in config.train_fractions:
            curves = {}
            for cell in cells:
                if cell.error or cell.fraction != fraction or cell.init != init:
                    continue
                curve_path = Path(cell.directory) / "curve.csv"
                if curve_path.exists():
                    curves[cell.plan] = metrics.load_curve_csv(curve_path, config.evaluation)
            if len(curves) >= 2:
                name = f"significance__f{fraction:g}__{init}.csv"
                try:
                    metrics.export_significance_csv(
                        out / name, curves, config.operating_points,
                        config.curve_interpolation,
                    )
                except FtcnnError as exc:
                    with open(out / (name + ".error.txt"), "w") as fh:
                        fh.write(str(exc) + "\n")


# ---------------------------------------------------------------------------
# Report bundle

def emit_report(run_dir: str | Path) -> Path:
    """Collect a run's artifacts into a report/ directory.

    Regenerates SVG plots and significance matrices from the persisted CSVs
    and concatenates convergence traces; a missing artifact is an error that
    names the absent file.
    """
    run_dir = Path(run_dir)
    config_path = run_dir / "config.json"
    manifest_path = run_dir / "manifest.json"
    for required in (config_path, manifest_path):
        if not required.exists():
            raise ReportError(f"missing artifact: {required}")
    with open(config_path) as fh:
        config = json.load(fh)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    report = run_dir / "report"
    report.mkdir(exist_ok=True)

    evaluation = config["evaluation"]
    curves: dict[str, dict[str, metrics.Curve]] = {}
    convergence_rows = []
    boxplot_rows = []
    for cell in manifest["cells"]:
        cell_dir = run_dir / cell["dir"]
        if cell["error"] is not None:
            continue
        conv = cell_dir / "convergence.csv"
        if not conv.exists():
            raise ReportError(f"missing artifact: {conv}")
        with open(conv, newline="") as fh:
            for row in csv.DictReader(fh):
                convergence_rows.append(
                    [cell["plan"], f"{cell['fraction']:g}", cell["init"],
                     row["epoch"], row["valAUC"]]
                )
        if evaluation in ("roc", "froc"):
            curve_path = cell_dir / "curve.csv"
            if not curve_path.exists():
                raise ReportError(f"missing artifact: {curve_path}")
            group = f"f{cell['fraction']:g}__{cell['init']}"
            curves.setdefault(group, {})[cell["plan"]] = metrics.load_curve_csv(
                curve_path, evaluation
            )
        else:
            box = cell_dir / "boxplot.csv"
            if not box.exists():
                raise ReportError(f"missing artifact: {box}")
            with open(box, newline="") as fh:
                reader = csv.reader(fh)
                header = next(reader)
                for row in reader:
                    boxplot_rows.append(
                        [cell["plan"], f"{cell['fraction']:g}", cell["init"]] + row
                    )

    with open(report / "convergence.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["plan", "fraction", "init", "epoch", "valAUC"])
        writer.writerows(convergence_rows)

    if boxplot_rows:
        with open(report / "boxplots.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["plan", "fraction", "init", "name", "median", "q1", "q3",
                 "whiskerLo", "whiskerHi", "mean", "stddev", "outliers"]
            )
            writer.writerows(boxplot_rows)

    for group, named in curves.items():
        metrics.export_curve_svg(report / f"curves__{group}.svg", named)
        if len(named) >= 2:
            metrics.export_significance_csv(
                report / f"significance__{group}.csv", named,
                config["operating_points"],
                config.get("curve_interpolation", "linear"),
            )
    return report
