"""Segmentation metrics on 2-D binary masks.

HD95 is undefined when either mask is empty; such cases are excluded from
the mean and counted in ``nan_ratio``.  A class absent from both prediction
and ground truth scores Dice = IoU = 1.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

CSV_COLUMNS = ("class", "dice", "hd95", "defined", "iou", "recall", "accuracy")
_EIGHT = np.ones((3, 3), dtype=bool)


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred) > 0.5
    gt = np.asarray(gt) > 0.5
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def dice(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    total = pred.sum() + gt.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(pred, gt).sum() / total)


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one 8-neighbour outside the mask (image border counts as outside)."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, structure=_EIGHT, border_value=0)


def surface_distances(pred, gt) -> np.ndarray:
    """Nearest-boundary distances from each boundary pixel of one mask to the other, both directions."""
    pred, gt = _pair(pred, gt)
    bp, bg = boundary(pred), boundary(gt)
    to_gt = ndimage.distance_transform_edt(~bg)
    to_pred = ndimage.distance_transform_edt(~bp)
    return np.concatenate([to_gt[bp], to_pred[bg]])


def hd95(pred, gt) -> float | None:
    """95th percentile of the symmetric boundary distances; None when either mask is empty."""
    pred, gt = _pair(pred, gt)
    if not pred.any() or not gt.any():
        return None
    return float(np.percentile(surface_distances(pred, gt), 95))


def confusion(pred, gt) -> tuple[int, int, int, int]:
    pred, gt = _pair(pred, gt)
    tp = int(np.sum(pred & gt))
    fp = int(np.sum(pred & ~gt))
    fn = int(np.sum(~pred & gt))
    tn = int(np.sum(~pred & ~gt))
    return tp, fp, fn, tn


def iou(pred, gt) -> float:
    tp, fp, fn, _ = confusion(pred, gt)
    return 1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn)


def recall(pred, gt) -> float:
    tp, _, fn, _ = confusion(pred, gt)
    return 1.0 if tp + fn == 0 else tp / (tp + fn)


def accuracy(pred, gt) -> float:
    tp, fp, fn, tn = confusion(pred, gt)
    return (tp + tn) / (tp + fp + fn + tn)


@dataclass
class ClassStats:
    dice: list[float] = field(default_factory=list)
    hd95: list[float | None] = field(default_factory=list)
    iou: list[float] = field(default_factory=list)
    recall: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)

    def add(self, pred, gt) -> None:
        self.dice.append(dice(pred, gt))
        self.hd95.append(hd95(pred, gt))
        self.iou.append(iou(pred, gt))
        self.recall.append(recall(pred, gt))
        self.accuracy.append(accuracy(pred, gt))

    def summary(self) -> dict:
        defined = [h for h in self.hd95 if h is not None]
        n = len(self.hd95)
        return {
            "dice": float(np.mean(self.dice)) if self.dice else float("nan"),
            "hd95": float(np.mean(defined)) if defined else float("nan"),
            "defined": len(defined),
            "nan_ratio": (n - len(defined)) / n if n else 0.0,
            "iou": float(np.mean(self.iou)) if self.iou else float("nan"),
            "recall": float(np.mean(self.recall)) if self.recall else float("nan"),
            "accuracy": float(np.mean(self.accuracy)) if self.accuracy else float("nan"),
        }


@dataclass
class MetricReport:
    """Per-class accumulators over a set of (H, W, C) prediction/label pairs."""

    classes: int
    per_class: list[ClassStats] = field(default_factory=list)

    def __post_init__(self):
        if not self.per_class:
            self.per_class = [ClassStats() for _ in range(self.classes)]

    def add(self, pred, gt) -> None:
        pred, gt = _pair(pred, gt)
        if pred.ndim == 2:
            pred, gt = pred[..., None], gt[..., None]
        if pred.shape[-1] != self.classes:
            raise ValueError(f"expected {self.classes} channels, got {pred.shape[-1]}")
        for c in range(self.classes):
            self.per_class[c].add(pred[..., c], gt[..., c])

    def sample_dice(self, i: int) -> float:
        """Mean over classes of the Dice of the i-th added sample."""
        return float(np.mean([s.dice[i] for s in self.per_class]))

    def class_summaries(self) -> list[dict]:
        return [s.summary() for s in self.per_class]

    def mean(self) -> dict:
        """Mean over classes; HD95 averages all defined cases, nan_ratio pools every case."""
        rows = self.class_summaries()
        defined = [h for s in self.per_class for h in s.hd95 if h is not None]
        total = sum(len(s.hd95) for s in self.per_class)
        return {
            "dice": float(np.mean([r["dice"] for r in rows])),
            "hd95": float(np.mean(defined)) if defined else float("nan"),
            "defined": len(defined),
            "nan_ratio": (total - len(defined)) / total if total else 0.0,
            "iou": float(np.mean([r["iou"] for r in rows])),
            "recall": float(np.mean([r["recall"] for r in rows])),
            "accuracy": float(np.mean([r["accuracy"] for r in rows])),
        }

    def rows(self, label: str = "") -> list[dict]:
        prefix = f"{label}:" if label else ""
        out = [{"class": f"{prefix}{c + 1}", **s} for c, s in enumerate(self.class_summaries())]
        out.append({"class": f"{prefix}mean", **self.mean()})
        return out


def write_csv(reports: dict[str, MetricReport], path=None, note: str | None = None) -> str:
    """Render reports as CSV (fixed column order); write to ``path`` when given."""
    buf = io.StringIO()
    if note:
        buf.write(f"# {note}\n")
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for label, report in reports.items():
        for row in report.rows(label):
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
