"""Command-line experiment runner.

Verbs: ``train`` (scratch), ``finetune`` (from a source checkpoint),
``sweep`` (plans x fractions x initializers), ``evaluate`` (curve/AUC for a
checkpoint), ``segment`` (interface segmentation of a PGM ROI), and
``report`` (collect a run's artifacts).  Flags mirror config keys and
override them; ``--seed`` is mandatory for the training verbs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import metrics, nn, segpipe
from .checkpoint import load_checkpoint
from .data.patchset import aggregate_groups
from .data.pnm import read_pnm, write_pgm, write_ppm
from .errors import FtcnnError
from .experiment import (
    ExperimentConfig,
    build_dataset,
    emit_report,
    run_experiment,
)
from .metrics import merged_binary_scores


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FtcnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ftcnn", description=__doc__)
    sub = parser.add_subparsers(required=True)

    def add_common(p, training: bool):
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, required=training,
                       help="run seed" + (" (required)" if training else ""))
        p.add_argument("--out", help="output directory (overrides config out_dir)")
        p.add_argument("--epochs", type=int)
        p.add_argument("--patience", type=int)

    p = sub.add_parser("train", help="train from scratch")
    add_common(p, training=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("finetune", help="fine-tune from a source checkpoint")
    add_common(p, training=True)
    p.add_argument("--source", help="source checkpoint directory")
    p.add_argument("--plan", help='fine-tune plan, e.g. "FT:conv3-fc8"')
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("sweep", help="run the full plan x fraction sweep")
    add_common(p, training=True)
    p.add_argument("--plans", help="comma-separated plan names")
    p.add_argument("--fractions", help="comma-separated training fractions")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset config")
    add_common(p, training=False)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("segment", help="segment the two interfaces in a PGM ROI")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="8-bit PGM region of interest")
    p.add_argument("--out", required=True)
    p.add_argument("--px-to-mm", type=float, default=0.1)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("report", help="collect a run directory into a report bundle")
    p.add_argument("--run", required=True)
    p.set_defaults(func=_cmd_report)
    return parser


def _load_config(args, **extra) -> ExperimentConfig:
    overrides = {
        "seed": getattr(args, "seed", None),
        "out_dir": getattr(args, "out", None),
        "epochs": getattr(args, "epochs", None),
        "patience": getattr(args, "patience", None),
    }
    overrides.update(extra)
    return ExperimentConfig.from_json(args.config, **overrides)


def _run_and_report(config: ExperimentConfig) -> int:
    report = run_experiment(config)
    for cell in report.cells:
        status = "ok" if cell.error is None else f"FAILED: {cell.error}"
        line = f"[{cell.plan} | f={cell.fraction:g} | {cell.init}] {status}"
        if cell.error is None and "test_auc" in cell.summary:
            line += f"  test AUC={cell.summary['test_auc']:.4f}"
        if cell.error is None and "mean_error_li_px" in cell.summary:
            line += (
                f"  err LI={cell.summary['mean_error_li_px']:.3f}px"
                f" MA={cell.summary['mean_error_ma_px']:.3f}px"
            )
        print(line)
    print(f"artifacts: {report.out_dir}")
    return 0 if report.ok else 1


def _cmd_train(args) -> int:
    config = _load_config(args, plans=["scratch"], train_fractions=[1.0])
    return _run_and_report(config)


def _cmd_finetune(args) -> int:
    extra = {}
    if args.plan:
        extra["plans"] = [args.plan]
    if args.source:
        extra["source_checkpoint"] = args.source
    config = _load_config(args, train_fractions=[1.0], **extra)
    return _run_and_report(config)


def _cmd_sweep(args) -> int:
    extra = {}
    if args.plans:
        extra["plans"] = [p.strip() for p in args.plans.split(",")]
    if args.fractions:
        extra["train_fractions"] = [float(f) for f in args.fractions.split(",")]
    config = _load_config(args, **extra)
    return _run_and_report(config)


def _cmd_evaluate(args) -> int:
    config = _load_config(args)
    if config.evaluation == "segmentation":
        raise FtcnnError("evaluate handles roc/froc configs; use the segment verb for ROIs")
    net, spec, _ = load_checkpoint(args.checkpoint)
    data = build_dataset(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    probs = nn.predict_probs(net, spec, data.test.patches)
    scores, _ = merged_binary_scores(probs, data.test.labels)
    records = aggregate_groups(scores, data.test)
    if config.evaluation == "froc":
        curve = metrics.froc_curve(records, len({r.unit_id for r in records}))
    else:
        curve = metrics.roc_curve(
            [r.mean_score for r in records], [1 if r.label > 0 else 0 for r in records]
        )
    metrics.export_curve_csv(out / "curve.csv", curve)
    metrics.export_curve_svg(out / "curve.svg", {Path(args.checkpoint).name: curve})
    if config.evaluation == "roc":
        print(f"test AUC: {metrics.auc(curve):.6f}")
    print(f"artifacts: {out}")
    return 0


def _cmd_segment(args) -> int:
    net, spec, _ = load_checkpoint(args.checkpoint)
    roi = read_pnm(args.image)
    if roi.ndim == 3:
        roi = roi.mean(axis=0)  # color input: collapse to gray
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    patch_size = spec.input_shape[1]
    maps = segpipe.infer_confidence_maps(net, spec, roi, patch_size)
    step = segpipe.thin_columnwise(maps)
    params = segpipe.SnakeParams()
    smooth = segpipe.BoundaryPair(
        y_li=segpipe.snake_smooth(step.y_li, maps.map_li, params),
        y_ma=segpipe.snake_smooth(step.y_ma, maps.map_ma, params),
    )
    segpipe.export_boundaries_csv(out / "boundaries.csv", smooth, args.px_to_mm)
    write_pgm(out / "map_li.pgm", maps.map_li)
    write_pgm(out / "map_ma.pgm", maps.map_ma)
    write_ppm(out / "map_merged.ppm", segpipe.merged_map_image(maps))
    thickness = segpipe.measure_thickness(smooth, args.px_to_mm)
    result = {
        "mean_thickness_mm": thickness.mean_thickness,
        "interfaces_crossed": thickness.crossed,
    }
    with open(out / "thickness.json", "w") as fh:
        json.dump(result, fh, indent=2)
    print(f"mean thickness: {thickness.mean_thickness:.4f} mm")
    if thickness.crossed:
        print("warning: interfaces cross in at least one column")
    print(f"artifacts: {out}")
    return 0


def _cmd_report(args) -> int:
    report_dir = emit_report(args.run)
    print(f"report: {report_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
