"""Localisation metrics: recall at temporal-IoU thresholds and mean IoU,
the multi-candidate protocol for elastic predictions, and the global-shift
baseline that widens single predictions by a fixed fraction.

All arithmetic is float64; means use exactly-rounded summation so reports
are reproducible bit-for-bit regardless of record order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .intervals import ElasticBoundary, Interval

REPORT_SCHEMA = "emb-report-v1"
DEFAULT_THRESHOLDS = (0.3, 0.5, 0.7)


def iou_seconds(pred, gt):
    """Temporal IoU of two (start, end) pairs in seconds."""
    ps, pe = float(pred[0]), float(pred[1])
    gs, ge = float(gt[0]), float(gt[1])
    inter = max(0.0, min(pe, ge) - max(ps, gs))
    union = (pe - ps) + (ge - gs) - inter
    if union <= 0.0:
        return 1.0 if (ps, pe) == (gs, ge) else 0.0
    return inter / union


@dataclass
class EvalReport:
    mode: str
    thresholds: tuple
    recall: dict
    miou: float
    n_samples: int
    records: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "schema": REPORT_SCHEMA,
            "mode": self.mode,
            "n_samples": self.n_samples,
            "recall": {f"{m:g}": self.recall[m] for m in self.thresholds},
            "miou": self.miou,
            "flags": self.flags,
        }

    def to_json_bytes(self):
        return (json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
                + "\n").encode("utf-8")

    def write(self, json_path, csv_path=None):
        with open(json_path, "wb") as fh:
            fh.write(self.to_json_bytes())
        if csv_path is not None:
            with open(csv_path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(self.records[0].keys()))
                writer.writeheader()
                writer.writerows(self.records)


def _aggregate(mode, ious, records, thresholds, flags=None):
    n = len(ious)
    recall = {m: (sum(1 for v in ious if v >= m) / n if n else 0.0) for m in thresholds}
    miou = math.fsum(ious) / n if n else 0.0
    return EvalReport(mode, tuple(thresholds), recall, miou, n, records, flags or {})


def recall_at_iou(pred_seconds, gt_seconds, thresholds=DEFAULT_THRESHOLDS,
                  ids=None, mode="det"):
    """Fraction of samples whose IoU with the label reaches each threshold,
    plus the mean IoU over all samples (>= convention at the threshold)."""
    if len(pred_seconds) != len(gt_seconds):
        raise ValueError(f"{len(pred_seconds)} predictions vs {len(gt_seconds)} labels")
    ious, records = [], []
    for i, (pred, gt) in enumerate(zip(pred_seconds, gt_seconds)):
        v = iou_seconds(pred, gt)
        ious.append(v)
        records.append({
            "id": ids[i] if ids else str(i),
            "pred_start": float(pred[0]), "pred_end": float(pred[1]),
            "gt_start": float(gt[0]), "gt_end": float(gt[1]), "iou": v,
        })
    return _aggregate(mode, ious, records, thresholds)


def evaluate_elastic(elastic_preds, grids, gt_seconds, thresholds=DEFAULT_THRESHOLDS,
                     ids=None, mode="ela"):
    """Score candidate-range predictions by their best enumerated pair.

    Every (start, end) frame combination drawn from the two ranges (start
    <= end) is converted to seconds through the sample's grid; the sample
    scores its maximum IoU against the label.  A sample with no orderable
    pair scores zero and is flagged.
    """
    if not (len(elastic_preds) == len(grids) == len(gt_seconds)):
        raise ValueError("inputs must be aligned lists of equal length")
    ious, records = [], []
    empty = 0
    for i, (eb, grid, gt) in enumerate(zip(elastic_preds, grids, gt_seconds)):
        pairs = eb.enumerate_pairs()
        best, best_pair = 0.0, None
        for s, e in pairs:
            v = iou_seconds(grid.frames_to_seconds(s, e), gt)
            if v > best:
                best, best_pair = v, (s, e)
        if not pairs:
            empty += 1
        ious.append(best)
        rec = {
            "id": ids[i] if ids else str(i),
            "start_lo": int(eb.start_range[0]), "start_hi": int(eb.start_range[1]),
            "end_lo": int(eb.end_range[0]), "end_hi": int(eb.end_range[1]),
            "gt_start": float(gt[0]), "gt_end": float(gt[1]), "iou": best,
        }
        if best_pair:
            rec["best_start"], rec["best_end"] = best_pair
        records.append(rec)
    flags = {"empty_candidate_sets": empty} if empty else {}
    return _aggregate(mode, ious, records, thresholds, flags)


def global_shift_baseline(det_preds, n_frames, shift_fraction=0.1):
    """Widen each single prediction into ranges of +-ceil(f x length) frames.

    A non-adaptive multi-candidate baseline: the same relative widening for
    every sample, so its candidate density matches the elastic predictions
    without using any per-sample alignment signal.
    """
    out = []
    for det, nf in zip(det_preds, n_frames):
        s, e = int(det.start), int(det.end)
        w = int(math.ceil(shift_fraction * (e - s + 1)))
        out.append(ElasticBoundary(
            (max(1, s - w), min(int(nf), s + w)),
            (max(1, e - w), min(int(nf), e + w)),
            det.unit))
    return out


def comparison_table(rows, path):
    """Write a strategy-comparison CSV: one row per (strategy, seed, mode)."""
    if not rows:
        return
    fieldnames = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
