"""COCO-style detection metrics: mAP50, mAP50-95, precision and recall.

AP uses 101-point interpolation over recall levels ``0, 0.01, ..., 1``.
Precision and recall are macro-averaged over scored classes at the single
confidence threshold that maximises their F1 on the IoU-0.5 matches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .boxes import Box, Detection, cxcywh_to_xyxy

IOU_THRESHOLDS: Tuple[float, ...] = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_LEVELS = np.arange(101) / 100


def iou(a: Box, b: Box) -> float:
    """IoU of two ``(x1, y1, x2, y2)`` boxes."""
    for box in (a, b):
        if not (box[2] > box[0] and box[3] > box[1]):
            raise ValueError(f"box must have positive width and height, got {box}")
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return min(1.0, inter / union)


def match_predictions(
    preds: Sequence[Tuple[int, float, Box]],
    gts: Sequence[Tuple[int, Box]],
    iou_threshold: float,
) -> List[bool]:
    """TP/FP flag per prediction (in input order) for one image.

    ``preds`` are ``(class_id, confidence, xyxy)``; ``gts`` are
    ``(class_id, xyxy)``. Predictions are visited by descending confidence,
    ties by input order, and each claims the still-unmatched same-class
    ground truth with the highest IoU at or above the threshold.
    """
    flags = [False] * len(preds)
    taken = [False] * len(gts)
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][1], i))
    for i in order:
        cls, _, box = preds[i]
        best, best_iou = -1, -1.0
        for j, (gcls, gbox) in enumerate(gts):
            if taken[j] or gcls != cls:
                continue
            v = iou(box, gbox)
            if v >= iou_threshold and v > best_iou:
                best, best_iou = j, v
        if best >= 0:
            taken[best] = True
            flags[i] = True
    return flags


def pr_curve(flags: Sequence[bool], confidences: Sequence[float], num_gt: int) -> Tuple[np.ndarray, np.ndarray]:
    order = sorted(range(len(flags)), key=lambda i: (-confidences[i], i))
    tp = np.cumsum([1 if flags[i] else 0 for i in order])
    fp = np.cumsum([0 if flags[i] else 1 for i in order])
    if len(order) == 0:
        return np.zeros(0), np.zeros(0)
    recall = tp / num_gt if num_gt else np.zeros(len(order))
    precision = tp / (tp + fp)
    return recall, precision


def ap_from_matches(flags: Sequence[bool], confidences: Sequence[float], num_gt: int) -> Optional[float]:
    """101-point interpolated AP; ``None`` when the class has nothing to score."""
    if num_gt == 0:
        return 0.0 if len(flags) else None
    if len(flags) == 0:
        return 0.0
    recall, precision = pr_curve(flags, confidences, num_gt)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_LEVELS, side="left")
    levels = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return math.fsum(levels.tolist()) / 101


@dataclass
class EvalReport:
    num_classes: int
    ap: Dict[int, List[float]]  # scored classes only; one AP per IoU threshold
    map50: float
    map50_95: float
    precision: float
    recall: float
    f1_confidence: Optional[float]
    pr_curves: Dict[int, List[Tuple[float, float]]] = field(default_factory=dict)

    HEADER = "# P/R macro-averaged over scored classes at the max-F1 confidence (IoU 0.5)"

    def to_kv(self) -> str:
        lines = [self.HEADER]
        lines.append(f"all,mAP50,{self.map50!r}")
        lines.append(f"all,mAP50-95,{self.map50_95!r}")
        lines.append(f"all,precision,{self.precision!r}")
        lines.append(f"all,recall,{self.recall!r}")
        lines.append(f"all,f1_confidence,{self.f1_confidence!r}")
        for c in sorted(self.ap):
            for t, v in zip(IOU_THRESHOLDS, self.ap[c]):
                lines.append(f"{c},AP{int(round(t * 100))},{v!r}")
        return "\n".join(lines) + "\n"

    def to_table(self, class_names: Optional[Sequence[str]] = None) -> str:
        rows = [f"{'class':<30s} {'AP50':>8s} {'AP50-95':>8s}"]
        for c in sorted(self.ap):
            name = class_names[c] if class_names and c < len(class_names) else str(c)
            rows.append(f"{name:<30s} {self.ap[c][0]:8.5f} {float(np.mean(self.ap[c])):8.5f}")
        rows.append(
            f"{'all':<30s} {self.map50:8.5f} {self.map50_95:8.5f}   "
            f"P={self.precision:.5f} R={self.recall:.5f}"
        )
        return "\n".join(rows) + "\n"


def parse_kv(text: str) -> Dict[Tuple[str, str], Optional[float]]:
    """Inverse of :meth:`EvalReport.to_kv` (values only)."""
    out = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ValueError(f"line {ln}: expected 'class,metric,value', got {line!r}")
        cls, metric, value = parts
        out[(cls, metric)] = None if value == "None" else float(value)
    return out


def _iou_matrix(a: Sequence[Box], b: Sequence[Box]) -> np.ndarray:
    if not a or not b:
        return np.zeros((len(a), len(b)))
    A = np.array(a, dtype=np.float64)[:, None, :]
    B = np.array(b, dtype=np.float64)[None, :, :]
    iw = np.minimum(A[..., 2], B[..., 2]) - np.maximum(A[..., 0], B[..., 0])
    ih = np.minimum(A[..., 3], B[..., 3]) - np.maximum(A[..., 1], B[..., 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (A[..., 2] - A[..., 0]) * (A[..., 3] - A[..., 1])
    area_b = (B[..., 2] - B[..., 0]) * (B[..., 3] - B[..., 1])
    return np.minimum(1.0, inter / (area_a + area_b - inter))


def _greedy(cand: np.ndarray, thr: float) -> List[bool]:
    # rows already in visiting order; unavailable pairs hold -1
    flags = []
    free = np.ones(cand.shape[1], dtype=bool)
    for row in cand:
        masked = np.where(free & (row >= thr), row, -1.0)
        j = int(np.argmax(masked)) if masked.size else -1
        if j >= 0 and masked[j] >= 0:
            free[j] = False
            flags.append(True)
        else:
            flags.append(False)
    return flags


def _canonical(dets: Sequence[Detection]) -> List[Detection]:
    return sorted(dets, key=lambda d: (-d.confidence, d.class_id, d.box))


def evaluate(
    preds: Mapping[str, Sequence[Detection]],
    gts: Mapping[str, Sequence[Tuple[int, Box]]],
    num_classes: int,
) -> EvalReport:
    """Score predictions against ground truth; both keyed by image id, boxes ``cxcywh``."""
    for d in (d for dets in preds.values() for d in dets):
        if not 0 <= d.class_id < num_classes:
            raise ValueError(f"prediction class {d.class_id} outside catalog of {num_classes}")
    for cls, _ in (g for boxes in gts.values() for g in boxes):
        if not 0 <= cls < num_classes:
            raise ValueError(f"ground-truth class {cls} outside catalog of {num_classes}")

    images = sorted(set(preds) | set(gts))
    num_gt = [0] * num_classes
    for boxes in gts.values():
        for cls, _ in boxes:
            num_gt[cls] += 1

    # per threshold, per class: (confidence, image rank, within-image rank, flag)
    records = {t: [[] for _ in range(num_classes)] for t in IOU_THRESHOLDS}
    for rank, image in enumerate(images):
        dets = _canonical(preds.get(image, ()))
        g = gts.get(image, ())
        ious = _iou_matrix([cxcywh_to_xyxy(d.box) for d in dets], [cxcywh_to_xyxy(b) for _, b in g])
        same = np.array([[d.class_id == cls for cls, _ in g] for d in dets], dtype=bool).reshape(ious.shape)
        cand = np.where(same, ious, -1.0)
        for t in IOU_THRESHOLDS:
            for k, (d, flag) in enumerate(zip(dets, _greedy(cand, t))):
                records[t][d.class_id].append((-d.confidence, rank, k, flag))

    ap: Dict[int, List[float]] = {}
    curves: Dict[int, List[Tuple[float, float]]] = {}
    per_class_50 = {}
    for c in range(num_classes):
        row = []
        for t in IOU_THRESHOLDS:
            recs = sorted(records[t][c])
            flags = [r[3] for r in recs]
            confs = [-r[0] for r in recs]
            row.append(ap_from_matches(flags, confs, num_gt[c]))
            if t == IOU_THRESHOLDS[0]:
                per_class_50[c] = (flags, confs)
        if row[0] is None:
            continue
        ap[c] = row
        rec, prec = pr_curve(*per_class_50[c], num_gt[c])
        curves[c] = list(zip(rec.tolist(), prec.tolist()))

    if ap:
        map50 = math.fsum(v[0] for v in ap.values()) / len(ap)
        map50_95 = math.fsum(math.fsum(v) / len(v) for v in ap.values()) / len(ap)
    else:
        map50 = map50_95 = 0.0
    precision, recall, conf = _max_f1_point({c: per_class_50[c] for c in ap}, num_gt)
    return EvalReport(num_classes, ap, map50, map50_95, precision, recall, conf, curves)


def _max_f1_point(per_class, num_gt) -> Tuple[float, float, Optional[float]]:
    thresholds = np.array(sorted({cf for _, confs in per_class.values() for cf in confs}, reverse=True))
    if thresholds.size == 0:
        return 0.0, 0.0, None
    p_sum = np.zeros(thresholds.size)
    r_sum = np.zeros(thresholds.size)
    for c, (flags, confs) in per_class.items():
        order = sorted(range(len(confs)), key=lambda i: (-confs[i], i))
        cs = np.array([confs[i] for i in order])
        cum_tp = np.concatenate([[0], np.cumsum([1 if flags[i] else 0 for i in order])])
        n = np.searchsorted(-cs, -thresholds, side="right")  # predictions with conf >= t
        tp = cum_tp[n]
        p_sum += np.where(n > 0, tp / np.maximum(n, 1), 0.0)
        r_sum += tp / num_gt[c] if num_gt[c] else 0.0
    P = p_sum / len(per_class)
    R = r_sum / len(per_class)
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(P + R > 0, 2 * P * R / (P + R), 0.0)
    k = int(np.argmax(f1))  # first maximum = highest confidence
    return float(P[k]), float(R[k]), float(thresholds[k])
