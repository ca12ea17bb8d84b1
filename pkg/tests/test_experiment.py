import json
from pathlib import Path

import numpy as np
import pytest

from ftcnn import nn, transfer
from ftcnn.checkpoint import load_checkpoint, save_checkpoint
from ftcnn.data import synthetic
from ftcnn.data.patchset import split_train_val
from ftcnn.errors import ConfigError, ReportError
from ftcnn.experiment import (
    ExperimentConfig,
    build_dataset,
    emit_report,
    preset_architecture,
    run_experiment,
    train_network,
)


def tiny_cfg(tmp_path, **kw):
    base = dict(
        seed=5,
        out_dir=str(tmp_path / "run"),
        arch={"preset": "tiny32"},
        dataset={"generator": "shapes-target", "train_units": 10, "test_units": 5,
                 "per_unit": 8},
        plans=["scratch"],
        initializers=["xavier"],
        epochs=2,
        patience=1,
        evaluation="roc",
        schedule={"base_alpha": 0.01},
        batch_size=16,
    )
    base.update(kw)
    return ExperimentConfig(**base)


def test_preset_architectures_validate():
    for name, classes in (("alexnet227", 2), ("tiny32", 4), ("patchnet13", 3)):
        spec = preset_architecture(name, classes)
        assert spec.class_count() == classes
    with pytest.raises(ConfigError):
        preset_architecture("resnet", 2)


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 1, "out_dir": "x", "arch": {}, "dataset": {},
                                "bogus": True}))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(path)


def test_config_requires_source_for_finetune(tmp_path):
    with pytest.raises(ConfigError):
        tiny_cfg(tmp_path, plans=["FT:only fc4"])


def test_checkpoint_round_trip(tmp_path):
    spec = preset_architecture("tiny32", classes=2)
    net = nn.build_network(spec, "xavier", seed=3)
    save_checkpoint(tmp_path / "ckpt", net, spec, iteration=17, epoch=4, val_auc=0.9)
    back, back_spec, meta = load_checkpoint(tmp_path / "ckpt")
    assert back_spec == spec
    assert meta["iteration"] == 17 and meta["epoch"] == 4
    for name in net.layer_names():
        assert back.layers[name].w.tobytes() == net.layers[name].w.tobytes()
        assert back.layers[name].b.tobytes() == net.layers[name].b.tobytes()


def test_train_network_restores_best_epoch_snapshot():
    spec = preset_architecture("tiny32", classes=2)
    pset = synthetic.transfer_target_set(8, 10, seed=2)
    tr, va = split_train_val(pset, 0.8, seed=1)
    net = nn.build_network(spec, "xavier", seed=4)
    plan = transfer.make_plan("scratch", spec)
    sched = transfer.plan_schedule(plan, spec, batch_size=16, epoch_length=len(tr),
                                   base_alpha=0.01)
    res = train_network(net, spec, sched, tr, va, epochs=4, patience=3, seed=5)
    assert res.best_epoch >= 1
    assert len(res.val_trace) == res.epochs_run
    best_auc = max(v for _, v in res.val_trace)
    assert res.best_val_auc == best_auc


def test_run_experiment_artifacts_and_summary(tmp_path):
    cfg = tiny_cfg(tmp_path)
    report = run_experiment(cfg)
    assert report.ok
    out = Path(cfg.out_dir)
    cell = out / "cells" / "scratch__f1__xavier"
    for f in ("summary.json", "curve.csv", "curve.svg", "convergence.csv"):
        assert (cell / f).exists()
    assert (cell / "checkpoint" / "meta.json").exists()
    assert (out / "config.json").exists() and (out / "manifest.json").exists()
    summary = json.loads((cell / "summary.json").read_text())
    assert 0.0 <= summary["test_auc"] <= 1.0


def test_run_experiment_records_cell_errors(tmp_path):
    spec = preset_architecture("tiny32", classes=2)
    save_checkpoint(tmp_path / "src", nn.build_network(spec, "xavier", 0), spec)
    # the bogus plan passes config validation but fails inside its cell
    cfg = tiny_cfg(tmp_path, plans=["scratch", "FT:conv9-fc4"],
                   source_checkpoint=str(tmp_path / "src"))
    report = run_experiment(cfg)
    assert not report.ok
    errors = {c.plan: c.error for c in report.cells}
    assert errors["scratch"] is None
    assert errors["FT:conv9-fc4"] is not None
    failed_dir = [c.directory for c in report.cells if c.error][0]
    assert json.loads((Path(failed_dir) / "summary.json").read_text())["error"]


def test_fraction_units_are_strict_subset(tmp_path):
    cfg = tiny_cfg(tmp_path, train_fractions=[1.0, 0.5])
    report = run_experiment(cfg)
    cells = {c.fraction: c for c in report.cells}
    assert cells[0.5].summary["train_units"] == 5
    assert cells[1.0].summary["train_units"] == 10


def test_missing_referenced_files_are_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="config file not found"):
        ExperimentConfig.from_json(tmp_path / "nope.json")
    # a missing architecture file fails its cell with a recorded error
    cfg = tiny_cfg(tmp_path, arch={"file": str(tmp_path / "missing.txt")})
    report = run_experiment(cfg)
    assert not report.ok
    assert "architecture file" in report.cells[0].error
    # a missing manifest is a dataset-level error and aborts the run
    with pytest.raises(ConfigError, match="manifest"):
        cfg = tiny_cfg(tmp_path, out_dir=str(tmp_path / "m"),
                       dataset={"manifest": str(tmp_path / "nope"),
                                "test_manifest": str(tmp_path / "nope2")})
        run_experiment(cfg)


def test_finetune_through_runner(tmp_path):
    pre = tiny_cfg(tmp_path, out_dir=str(tmp_path / "pre"),
                   dataset={"generator": "shapes-source", "train_units": 10,
                            "test_units": 5, "per_unit": 8})
    report = run_experiment(pre)
    assert report.ok
    ckpt = Path(pre.out_dir) / "cells" / "scratch__f1__xavier" / "checkpoint"
    cfg = tiny_cfg(tmp_path, out_dir=str(tmp_path / "ft"),
                   plans=["FT:only fc4", "FT:conv1-fc4"],
                   source_checkpoint=str(ckpt))
    report = run_experiment(cfg)
    assert report.ok
    sig = Path(cfg.out_dir) / "significance__f1__xavier.csv"
    assert sig.exists()


def test_emit_report_names_missing_artifact(tmp_path):
    cfg = tiny_cfg(tmp_path)
    run_experiment(cfg)
    victim = Path(cfg.out_dir) / "cells" / "scratch__f1__xavier" / "curve.csv"
    victim.unlink()
    with pytest.raises(ReportError, match="curve.csv"):
        emit_report(cfg.out_dir)


def test_emit_report_bundle(tmp_path):
    cfg = tiny_cfg(tmp_path, plans=["scratch"], train_fractions=[1.0])
    report = run_experiment(cfg)
    report_dir = emit_report(cfg.out_dir)
    assert (report_dir / "convergence.csv").exists()
    conv = (report_dir / "convergence.csv").read_text().splitlines()
    assert conv[0] == "plan,fraction,init,epoch,valAUC"
    assert len(conv) - 1 == report.cells[0].summary["epochs_run"]


def test_initializer_comparison_emits_one_trace_per_method(tmp_path):
    cfg = tiny_cfg(tmp_path, initializers=["gaussian", "xavier", "msra"])
    report = run_experiment(cfg)
    assert report.ok and len(report.cells) == 3
    for init in ("gaussian", "xavier", "msra"):
        assert (Path(cfg.out_dir) / "cells" / f"scratch__f1__{init}" /
                "convergence.csv").exists()
    report_dir = emit_report(cfg.out_dir)
    conv = (report_dir / "convergence.csv").read_text().splitlines()[1:]
    inits = {line.split(",")[2] for line in conv}
    assert inits == {"gaussian", "xavier", "msra"}


def test_snake_config_overrides(tmp_path):
    cfg = tiny_cfg(
        tmp_path,
        arch={"preset": "patchnet13"},
        dataset={"generator": "cimt", "train_rois": 4, "test_rois": 4,
                 "counts": [30, 30, 30], "patch_size": 13},
        evaluation="segmentation",
        snake={"tension": 0.3, "max_iters": 50},
    )
    report = run_experiment(cfg)
    assert report.ok
    cfg_bad = tiny_cfg(
        tmp_path,
        out_dir=str(tmp_path / "bad"),
        arch={"preset": "patchnet13"},
        dataset={"generator": "cimt", "train_rois": 4, "test_rois": 4,
                 "counts": [30, 30, 30], "patch_size": 13},
        evaluation="segmentation",
        snake={"wrongness": 1.0},
    )
    report = run_experiment(cfg_bad)
    assert not report.ok
    assert "snake" in report.cells[0].error


def test_emit_report_aggregates_segmentation_boxplots(tmp_path):
    cfg = tiny_cfg(
        tmp_path,
        arch={"preset": "patchnet13"},
        dataset={"generator": "cimt", "train_rois": 4, "test_rois": 4,
                 "counts": [30, 30, 30], "patch_size": 13},
        evaluation="segmentation",
    )
    assert run_experiment(cfg).ok
    report_dir = emit_report(cfg.out_dir)
    lines = (report_dir / "boxplots.csv").read_text().splitlines()
    assert lines[0].startswith("plan,fraction,init,name,median")
    assert len(lines) == 3  # one row per interface
    assert (Path(cfg.out_dir) / "cells" / "scratch__f1__xavier" /
            "map_merged_000.ppm").exists()


def test_stratify_config_balances_training_set(tmp_path):
    cfg = tiny_cfg(tmp_path, stratify_to=40)
    report = run_experiment(cfg)
    assert report.ok
    s = report.cells[0].summary
    assert s["train_patches"] + s["val_patches"] == 40


FROC_ARCH = """
layer | type            | input   | kernel | stride | pad | output
data  | input           | 1x16x16 | N/A    | N/A    | N/A | 1x16x16
conv1 | convolution     | 1x16x16 | 3x3    | 1      | 0   | 4x14x14
pool1 | max-pool        | 4x14x14 | 2x2    | 2      | 0   | 4x7x7
fc2   | fully-connected | 4x7x7   | 7x7    | 1      | 0   | 2x1
"""


def lesion_structured_set(seed, n_units=6):
    """Candidate groups with lesion ids: 2 lesions x 2 candidates x 3 patches
    per unit, plus 4 negative candidates x 3 patches."""
    rng = np.random.default_rng(seed)
    patches, labels, groups, units, lesions = [], [], [], [], []
    gid = 0
    for u in range(n_units):
        for lesion in range(2):
            for cand in range(2):
                for _ in range(3):
                    patches.append(rng.normal(0.7, 0.2, (1, 16, 16)))
                    labels.append(1)
                    groups.append(gid)
                    units.append(f"vol{u}")
                    lesions.append(f"vol{u}-L{lesion}")
                gid += 1
        for cand in range(4):
            for _ in range(3):
                patches.append(rng.normal(0.3, 0.2, (1, 16, 16)))
                labels.append(0)
                groups.append(gid)
                units.append(f"vol{u}")
                lesions.append(None)
            gid += 1
    from ftcnn.data.patchset import LabeledPatchSet

    return LabeledPatchSet(
        patches=np.stack(patches), labels=np.asarray(labels),
        group_ids=groups, unit_ids=units, lesion_ids=lesions,
    )


def test_froc_evaluation_end_to_end(tmp_path):
    from ftcnn.data.patchset import save_patchset

    save_patchset(tmp_path / "train", lesion_structured_set(1, n_units=6))
    save_patchset(tmp_path / "test", lesion_structured_set(2, n_units=3))
    cfg = tiny_cfg(
        tmp_path,
        arch={"text": FROC_ARCH},
        dataset={"manifest": str(tmp_path / "train"),
                 "test_manifest": str(tmp_path / "test")},
        evaluation="froc",
        operating_points=[1.0, 2.0],
    )
    report = run_experiment(cfg)
    assert report.ok
    curve_path = Path(report.cells[0].directory) / "curve.csv"
    assert curve_path.exists()
    from ftcnn.metrics import load_curve_csv

    curve = load_curve_csv(curve_path, "froc")
    assert np.all(np.diff(curve.xs) >= 0)
    assert curve.ys[-1] == 1.0  # lowest threshold detects every lesion


def test_deterministic_rerun_bitwise(tmp_path):
    cfg_a = tiny_cfg(tmp_path, out_dir=str(tmp_path / "a"))
    cfg_b = tiny_cfg(tmp_path, out_dir=str(tmp_path / "b"))
    run_experiment(cfg_a)
    run_experiment(cfg_b)
    a_files = sorted(p for p in Path(cfg_a.out_dir).rglob("*.csv"))
    b_files = sorted(p for p in Path(cfg_b.out_dir).rglob("*.csv"))
    assert len(a_files) == len(b_files) >= 2
    for fa, fb in zip(a_files, b_files):
        assert fa.read_bytes() == fb.read_bytes(), fa.name
