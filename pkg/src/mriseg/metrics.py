"""Overlap metrics between label volumes, and the engine timing benchmark.

Every metric is the one-vs-rest collapse of a confusion matrix over masked
voxels. A ratio with a zero denominator scores 1.0 when the prediction has
no error for that class (``FP == FN == 0``) and 0.0 otherwise.
"""
from __future__ import annotations

import csv
import json
import logging
import statistics
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ClassCountMismatch
from .volume import BinaryMask, LabelVolume, check_same_geometry

log = logging.getLogger(__name__)

__all__ = [
    "METRICS",
    "CLASS_NAMES",
    "ConfusionMatrix",
    "OverlapReport",
    "confusion",
    "overlap_report",
    "benchmark_engines",
    "rank_reports",
    "write_reports_json",
    "write_reports_csv",
]

# report column order
METRICS = ("accuracy", "sensitivity", "specificity", "precision", "dice", "jaccard")
CLASS_NAMES = ("csf", "gm", "wm")


def class_names(k: int) -> tuple:
    return CLASS_NAMES if k == 3 else tuple(f"class_{i}" for i in range(1, k + 1))


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[i, j]``: masked voxels of truth class ``i+1`` predicted as ``j+1``."""

    counts: np.ndarray

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def one_vs_rest(self, cls: int):
        """``(TP, FP, FN, TN)`` for 0-based class index ``cls``."""
        c = self.counts
        tp = int(c[cls, cls])
        fp = int(c[:, cls].sum()) - tp
        fn = int(c[cls, :].sum()) - tp
        tn = self.total - tp - fp - fn
        return tp, fp, fn, tn


def confusion(pred: LabelVolume, truth: LabelVolume, mask: Optional[BinaryMask] = None) -> ConfusionMatrix:
    """Joint label counts over ``mask`` (default: voxels labelled in ``truth``).

    Raises
    ------
    GeometryMismatch, ClassCountMismatch
    ValueError
        If a masked voxel carries label 0 in either volume.
    """
    if mask is None:
        mask = truth.to_mask()
    check_same_geometry(pred, truth, mask)
    if pred.class_count != truth.class_count:
        raise ClassCountMismatch(f"pred has {pred.class_count} classes, truth {truth.class_count}")
    k = truth.class_count
    p = pred.labels[mask.bits].astype(np.int64)
    t = truth.labels[mask.bits].astype(np.int64)
    if p.size and (p.min() == 0 or t.min() == 0):
        raise ValueError("masked voxels must carry a tissue label in both volumes")
    counts = np.bincount((t - 1) * k + (p - 1), minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts)


def _ratio(num: int, den: int, perfect: bool) -> float:
    if den == 0:
        return 1.0 if perfect else 0.0
    return num / den


def class_metrics(tp: int, fp: int, fn: int, tn: int) -> Dict[str, float]:
    perfect = fp == 0 and fn == 0
    return {
        "accuracy": _ratio(tp + tn, tp + fp + fn + tn, perfect),
        "sensitivity": _ratio(tp, tp + fn, perfect),
        "specificity": _ratio(tn, tn + fp, perfect),
        "precision": _ratio(tp, tp + fp, perfect),
        "dice": _ratio(2 * tp, 2 * tp + fp + fn, perfect),
        "jaccard": _ratio(tp, tp + fp + fn, perfect),
    }


@dataclass
class OverlapReport:
    method: str
    per_class: Dict[str, Dict[str, float]]
    macro: Dict[str, float]
    wall_time_seconds: float
    error: Optional[str] = None

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "per_class": self.per_class,
            "macro": self.macro,
            "wall_time_seconds": self.wall_time_seconds,
        }
        if self.error is not None:
            out["error"] = self.error
        return out

    def csv_row(self) -> list:
        return [self.method] + [self.macro.get(m, float("nan")) for m in METRICS] + [self.wall_time_seconds]


def overlap_report(cm: ConfusionMatrix, wall_time: float = 0.0, method: str = "") -> OverlapReport:
    names = class_names(cm.k)
    per_class = {names[i]: class_metrics(*cm.one_vs_rest(i)) for i in range(cm.k)}
    macro = {m: float(np.mean([per_class[n][m] for n in names])) for m in METRICS}
    return OverlapReport(method, per_class, macro, float(wall_time))


def rank_reports(reports: Sequence[OverlapReport]) -> dict:
    """Method names ordered by median time (fastest first) and by macro Dice (best first)."""
    ok = [r for r in reports if r.error is None]
    return {
        "by_time": [r.method for r in sorted(ok, key=lambda r: r.wall_time_seconds)],
        "by_dice": [r.method for r in sorted(ok, key=lambda r: -r.macro["dice"])],
    }


def benchmark_engines(volume, mask: BinaryMask, truth: LabelVolume, engines: Sequence[str],
                      cfg=None, repetitions: int = 1) -> List[OverlapReport]:
    """Time each engine ``repetitions`` times; report median wall time and metrics.

    Engines run one after another. An engine that raises yields a report
    whose ``error`` holds the message (metrics empty) and the run goes on.
    """
    from .segmentation import SegConfig, run_engine

    if not engines:
        raise ValueError("engines must be nonempty")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    cfg = cfg or SegConfig()
    reports = []
    for name in engines:
        times = []
        try:
            for _ in range(repetitions):
                t0 = time.perf_counter()
                result = run_engine(name, volume, mask, cfg)
                times.append(time.perf_counter() - t0)
        except Exception as exc:  # noqa: BLE001 -- reported per engine
            log.error("engine %s failed: %s", name, exc)
            reports.append(OverlapReport(name, {}, {}, float("nan"), error=f"{type(exc).__name__}: {exc}"))
            continue
        report = overlap_report(confusion(result.labels, truth, mask), statistics.median(times), name)
        reports.append(report)
        log.info("engine %s median %.4fs dice %.5f", name, report.wall_time_seconds, report.macro["dice"])
    return reports


def write_reports_json(reports: Sequence[OverlapReport], path) -> None:
    payload = {"reports": [r.to_dict() for r in reports], "ranking": rank_reports(reports)}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def write_reports_csv(reports: Sequence[OverlapReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method"] + [m.capitalize() for m in METRICS] + ["wall_time_seconds"])
        for r in reports:
            w.writerow(r.csv_row())
