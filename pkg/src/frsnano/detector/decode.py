from __future__ import annotations

from typing import List

import numpy as np

from ..boxes import Detection, cxcywh_to_xyxy
from ..metrics import iou
from ..tensor import Tensor


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def decode_and_nms(
    raw: np.ndarray,
    conf_threshold: float = 0.25,
    iou_threshold: float = 0.5,
    max_det: int = 100,
) -> List[List[Detection]]:
    """Turn a raw ``N x (5+K) x S x S`` head map into per-image detections.

    Confidence is ``sigmoid(objectness) * sigmoid(best class logit)``. Greedy
    per-class NMS visits boxes by descending confidence, ties by cell index.
    """
    if not (0.0 <= conf_threshold <= 1.0 and 0.0 <= iou_threshold <= 1.0):
        raise ValueError("thresholds must lie in [0, 1]")
    raw = raw.data if isinstance(raw, Tensor) else np.asarray(raw, dtype=np.float64)
    N, ch, S, _ = raw.shape
    obj = _sigmoid(raw[:, 0])
    box = _sigmoid(raw[:, 1:5])
    cls_p = _sigmoid(raw[:, 5:])
    best = cls_p.argmax(axis=1)
    conf = obj * np.take_along_axis(cls_p, best[:, None], axis=1)[:, 0]
    results = []
    for n in range(N):
        cand = []
        for cell in np.flatnonzero(conf[n].reshape(-1) >= conf_threshold):
            i, j = divmod(int(cell), S)
            cx = (j + box[n, 0, i, j]) / S
            cy = (i + box[n, 1, i, j]) / S
            w = max(box[n, 2, i, j] ** 2, 1e-12)
            h = max(box[n, 3, i, j] ** 2, 1e-12)
            cand.append((-float(conf[n, i, j]), int(cell), int(best[n, i, j]), (cx, cy, w, h)))
        cand.sort()
        kept: List[Detection] = []
        for negc, _, c, b in cand:
            xyxy = cxcywh_to_xyxy(b)
            if any(d.class_id == c and iou(xyxy, cxcywh_to_xyxy(d.box)) > iou_threshold for d in kept):
                continue
            kept.append(Detection(c, -negc, b))
            if len(kept) >= max_det:
                break
        results.append(kept)
    return results
