"""ROC/FROC curves, confidence intervals, significance tests, boxplot stats,
and the validation-AUC early-stopping monitor.

Curves carry a Wilson score interval on every sensitivity value; two curves
differ significantly at an operating point exactly when their intervals are
disjoint there (touching intervals do not count).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from statistics import NormalDist
from typing import Callable, Sequence

import numpy as np

from .errors import EvaluationError
from .data.patchset import GroupRecord


@dataclass
class Curve:
    xs: np.ndarray       # FP rate (roc) or FPs per unit (froc), ascending
    ys: np.ndarray       # sensitivity
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    kind: str = "roc"
    n_units: int | None = None
    n_positives: int | None = None

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.ys = np.asarray(self.ys, dtype=float)
        self.ci_lo = np.asarray(self.ci_lo, dtype=float)
        self.ci_hi = np.asarray(self.ci_hi, dtype=float)
        if not (self.xs.shape == self.ys.shape == self.ci_lo.shape == self.ci_hi.shape):
            raise EvaluationError("curve arrays must share one length")
        if np.any(np.diff(self.xs) < 0):
            raise EvaluationError("curve points must be sorted by x")
        if np.any(self.ci_lo > self.ys + 1e-12) or np.any(self.ys > self.ci_hi + 1e-12):
            raise EvaluationError("confidence band must bracket the curve")


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion k/n."""
    if n < 1 or not 0 <= k <= n:
        raise EvaluationError(f"need 0 <= k <= n with n >= 1, got k={k}, n={n}")
    z = NormalDist().inv_cdf(0.5 + level / 2.0)
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = (z / denom) * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    lo = 0.0 if k == 0 else max(0.0, center - half)   # endpoints are exact
    hi = 1.0 if k == n else min(1.0, center + half)
    return (lo, hi)


SensitivityCI = Callable[[int, int], tuple[float, float]]


def roc_curve(
    scores: Sequence[float],
    labels: Sequence[int],
    ci: SensitivityCI | None = None,
) -> Curve:
    """ROC curve sweeping every distinct score as a threshold (score >= t is positive)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise EvaluationError("scores and labels must be equal-length vectors")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("ROC needs at least one positive and one negative")
    ci = ci or wilson_interval
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = (labels[order] == 1).astype(np.int64)
    tp = np.cumsum(sorted_pos)
    fp = np.cumsum(1 - sorted_pos)
    # keep one point per distinct threshold: the last index of each run
    boundary = np.flatnonzero(np.diff(sorted_scores) != 0)
    keep = np.append(boundary, len(sorted_scores) - 1)
    tps = np.concatenate([[0], tp[keep]])
    fps = np.concatenate([[0], fp[keep]])
    lo, hi = zip(*(ci(int(k), n_pos) for k in tps))
    return Curve(
        xs=fps / n_neg,
        ys=tps / n_pos,
        ci_lo=np.asarray(lo),
        ci_hi=np.asarray(hi),
        kind="roc",
        n_positives=n_pos,
    )


def auc(curve: Curve) -> float:
    """Area under the curve by the trapezoid rule."""
    return float(np.trapezoid(curve.ys, curve.xs))


def froc_curve(
    records: Sequence[GroupRecord],
    n_units: int,
    ci: SensitivityCI | None = None,
) -> Curve:
    """Lesion-level sensitivity versus false-positive candidates per unit.

    A lesion counts as detected at a threshold when any of its candidate
    groups scores at or above it; false positives are negative groups.
    """
    if n_units < 1:
        raise EvaluationError("FROC needs at least one unit")
    ci = ci or wilson_interval
    lesion_best: dict = {}
    neg_scores = []
    for rec in records:
        if rec.label == 0:
            neg_scores.append(rec.mean_score)
        else:
            if rec.lesion_id is None:
                raise EvaluationError(f"positive group {rec.group_id!r} lacks a lesion id")
            prev = lesion_best.get(rec.lesion_id)
            if prev is None or rec.mean_score > prev:
                lesion_best[rec.lesion_id] = rec.mean_score
    if not lesion_best:
        raise EvaluationError("FROC needs at least one lesion")
    n_lesions = len(lesion_best)
    best = np.asarray(list(lesion_best.values()))
    negs = np.asarray(neg_scores)
    # sweep every distinct candidate score, exactly like exhaustive enumeration
    thresholds = np.unique([r.mean_score for r in records])[::-1]
    lo0, hi0 = ci(0, n_lesions)
    xs, ys, lo, hi = [0.0], [0.0], [lo0], [hi0]
    for t in thresholds:
        k = int((best >= t).sum())
        fp = int((negs >= t).sum()) if len(negs) else 0
        l, h = ci(k, n_lesions)
        xs.append(fp / n_units)
        ys.append(k / n_lesions)
        lo.append(l)
        hi.append(h)
    return Curve(
        xs=np.asarray(xs),
        ys=np.asarray(ys),
        ci_lo=np.asarray(lo),
        ci_hi=np.asarray(hi),
        kind="froc",
        n_units=n_units,
        n_positives=n_lesions,
    )


def curve_at(
    curve: Curve, x: float, interpolation: str = "linear"
) -> tuple[float, float, float]:
    """(y, ciLo, ciHi) at x, by linear interpolation or right-continuous steps.

    Where several points share an x (vertical segments), the topmost one is
    used.  x outside the curve support raises EvaluationError.
    """
    xs = curve.xs
    if x < xs[0] or x > xs[-1]:
        raise EvaluationError(f"x={x} outside curve support [{xs[0]}, {xs[-1]}]")
    # last point wins at duplicated x: for monotone curves that is the top
    _, last_idx = np.unique(xs[::-1], return_index=True)
    keep = len(xs) - 1 - last_idx
    xd = xs[keep]
    if interpolation == "linear":
        pick = lambda vals: float(np.interp(x, xd, vals[keep]))
    elif interpolation == "step":
        i = int(np.searchsorted(xd, x, side="right")) - 1
        pick = lambda vals: float(vals[keep][i])
    else:
        raise EvaluationError(f"unknown interpolation {interpolation!r}")
    return pick(curve.ys), pick(curve.ci_lo), pick(curve.ci_hi)


def compare_at_operating_points(
    a: Curve, b: Curve, xs: Sequence[float], interpolation: str = "linear"
) -> list[bool]:
    """Per operating point: True when the confidence intervals are disjoint.

    Touching intervals overlap (closed-interval rule), i.e. not significant.
    """
    verdicts = []
    for x in xs:
        _, a_lo, a_hi = curve_at(a, x, interpolation)
        _, b_lo, b_hi = curve_at(b, x, interpolation)
        verdicts.append(bool(a_hi < b_lo or b_hi < a_lo))
    return verdicts


@dataclass
class BoxStats:
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outliers: list[float]
    mean: float
    stddev: float


def tukey_box(values: Sequence[float]) -> BoxStats:
    """Quartiles by linear interpolation; whiskers at the most extreme data
    point within 1.5*IQR of the quartiles; everything beyond is an outlier."""
    vals = np.asarray(values, dtype=float)
    if vals.ndim != 1 or len(vals) < 4:
        raise EvaluationError("boxplot stats need at least 4 values")
    q1, med, q3 = np.percentile(vals, [25, 50, 75])
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = vals[(vals >= lo_fence) & (vals <= hi_fence)]
    outliers = [float(v) for v in vals if v < lo_fence or v > hi_fence]
    return BoxStats(
        median=float(med),
        q1=float(q1),
        q3=float(q3),
        whisker_lo=float(inside.min()),
        whisker_hi=float(inside.max()),
        outliers=outliers,
        mean=float(vals.mean()),
        stddev=float(vals.std(ddof=1)),
    )


class EarlyStopMonitor:
    """Stops after ``patience`` consecutive epochs without a new maximum.

    Epochs are 1-based; ``best_epoch`` is the first epoch attaining the
    running maximum.  With patience 0 the first non-improving epoch stops.
    """

    def __init__(self, patience: int = 5):
        if patience < 0:
            raise EvaluationError(f"patience must be >= 0, got {patience}")
        self.patience = patience
        self.epoch = 0
        self.best = -np.inf
        self.best_epoch = 0
        self.since_best = 0

    def observe(self, val_auc: float) -> bool:
        """Record one epoch's validation AUC; returns True when training should stop."""
        self.epoch += 1
        if val_auc > self.best:
            self.best = float(val_auc)
            self.best_epoch = self.epoch
            self.since_best = 0
            return False
        self.since_best += 1
        return self.since_best >= max(self.patience, 1)


def run_early_stop(aucs: Sequence[float], patience: int) -> tuple[int | None, int]:
    """Apply the monitor to a whole AUC stream; returns (stop_epoch, best_epoch)."""
    monitor = EarlyStopMonitor(patience)
    for a in aucs:
        if monitor.observe(a):
            return monitor.epoch, monitor.best_epoch
    return None, monitor.best_epoch


def merged_binary_scores(
    probs: np.ndarray, labels: Sequence[int]
) -> tuple[np.ndarray, np.ndarray]:
    """Positive-class score per sample; multi-class positives are merged.

    For 3-class interface tasks the two interface classes fold into one
    positive class so a single AUC can monitor convergence.
    """
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.shape[1] == 2:
        return probs[:, 1], labels
    return probs[:, 1:].sum(axis=1), (labels > 0).astype(np.int64)


# ---------------------------------------------------------------------------
# Exports

def export_curve_csv(path: str | Path, curve: Curve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "ciLo", "ciHi"])
        for x, y, lo, hi in zip(curve.xs, curve.ys, curve.ci_lo, curve.ci_hi):
            writer.writerow([repr(float(x)), repr(float(y)), repr(float(lo)), repr(float(hi))])


def load_curve_csv(path: str | Path, kind: str = "roc") -> Curve:
    xs, ys, lo, hi = [], [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            xs.append(float(row["x"]))
            ys.append(float(row["y"]))
            lo.append(float(row["ciLo"]))
            hi.append(float(row["ciHi"]))
    return Curve(xs=np.asarray(xs), ys=np.asarray(ys), ci_lo=np.asarray(lo),
                 ci_hi=np.asarray(hi), kind=kind)


def export_curve_svg(path: str | Path, curves: dict[str, Curve], title: str = "") -> None:
    """Plot curves with their confidence bands to an SVG file."""
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4.5))
    for name, curve in curves.items():
        (line,) = ax.plot(curve.xs, curve.ys, label=name, linewidth=1.5)
        ax.fill_between(curve.xs, curve.ci_lo, curve.ci_hi, alpha=0.15, color=line.get_color())
    kinds = {c.kind for c in curves.values()}
    ax.set_xlabel("false positives per unit" if kinds == {"froc"} else "false positive rate")
    ax.set_ylabel("sensitivity")
    if title:
        ax.set_title(title)
    ax.set_ylim(0.0, 1.02)
    ax.legend(loc="lower right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.savefig(str(path), format="svg", metadata={"Date": None})
    plt.close(fig)


def export_significance_csv(
    path: str | Path,
    curves: dict[str, Curve],
    operating_points: Sequence[float],
    interpolation: str = "linear",
) -> None:
    """Pairwise significance matrix; a cell lists the operating points at
    which the row and column curves differ significantly (empty if none)."""
    names = list(curves)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + names)
        for row_name in names:
            cells = [row_name]
            for col_name in names:
                if row_name == col_name:
                    cells.append("")
                    continue
                verdicts = compare_at_operating_points(
                    curves[row_name], curves[col_name], operating_points, interpolation
                )
                hits = [repr(float(x)) for x, sig in zip(operating_points, verdicts) if sig]
                cells.append(";".join(hits))
            writer.writerow(cells)


def export_boxstats_csv(path: str | Path, stats: dict[str, BoxStats]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["name", "median", "q1", "q3", "whiskerLo", "whiskerHi", "mean", "stddev", "outliers"]
        )
        for name, s in stats.items():
            writer.writerow(
                [
                    name,
                    repr(s.median),
                    repr(s.q1),
                    repr(s.q3),
                    repr(s.whisker_lo),
                    repr(s.whisker_hi),
                    repr(s.mean),
                    repr(s.stddev),
                    ";".join(repr(v) for v in s.outliers),
                ]
            )
