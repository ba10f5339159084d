"""Exhaustive average-precision reference for tiny single-class instances.

Enumerates every partial one-to-one assignment of predictions to ground
truths, keeps the one consistent with confidence-ordered greedy matching,
and evaluates 101-point interpolated AP straight from its definition.
"""

import itertools
import math


def _iou(a, b):
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def _greedy_consistent(order, assign, preds, gts, thr):
    taken = set()
    for i in order:
        best, best_iou = None, -1.0
        for j in range(len(gts)):
            if j in taken:
                continue
            v = _iou(preds[i][1], gts[j])
            if v >= thr and v > best_iou:
                best, best_iou = j, v
        if assign[i] != best:
            return False
        if best is not None:
            taken.add(best)
    return True


def ap_oracle(preds, gts, iou_threshold=0.5):
    """AP for ``preds = [(confidence, xyxy_box), ...]`` against ``gts = [xyxy_box, ...]``.

    Returns ``None`` when there is nothing to score (no ground truth and no
    predictions).
    """
    if len(preds) > 4 or len(gts) > 4:
        raise ValueError("ap_oracle is exhaustive; keep instances to <= 4 boxes")
    if not gts:
        return 0.0 if preds else None
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][0], i))
    choices = [None] + list(range(len(gts)))
    found = []
    for assign in itertools.product(choices, repeat=len(preds)):
        used = [a for a in assign if a is not None]
        if len(used) != len(set(used)):
            continue
        if _greedy_consistent(order, assign, preds, gts, iou_threshold):
            found.append(assign)
    if len(found) != 1:
        raise AssertionError(f"expected exactly one greedy-consistent assignment, found {len(found)}")
    assign = found[0]
    flags = [assign[i] is not None for i in order]
    levels = []
    for r in range(101):
        level = r / 100
        best = 0.0
        tp = fp = 0
        for f in flags:
            if f:
                tp += 1
            else:
                fp += 1
            if tp / len(gts) >= level:
                best = max(best, tp / (tp + fp))
        levels.append(best)
    return math.fsum(levels) / 101
