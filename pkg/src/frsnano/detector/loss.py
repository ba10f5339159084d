"""Per-cell detection loss.

Each ground-truth box is assigned to the cell containing its centre; when
two boxes land in the same cell the first one listed wins. Box targets are
the centre's fractional position inside the cell and the square roots of
the normalised width and height, all predicted through a sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .. import ops
from ..tensor import ShapeError, Tensor

GroundTruth = Sequence[Tuple[int, float, float, float, float]]  # class, cx, cy, w, h


@dataclass(frozen=True)
class LossWeights:
    obj: float = 1.0
    cls: float = 1.0
    box: float = 5.0


@dataclass
class Targets:
    obj: np.ndarray  # N x S x S
    cls: np.ndarray  # N x K x S x S one-hot at positive cells
    box: np.ndarray  # N x 4 x S x S


def cell_of(cx: float, cy: float, cells: int) -> Tuple[int, int]:
    return min(int(cy * cells), cells - 1), min(int(cx * cells), cells - 1)


def build_targets(gts: Sequence[GroundTruth], num_classes: int, cells: int) -> Targets:
    N = len(gts)
    obj = np.zeros((N, cells, cells))
    cls = np.zeros((N, num_classes, cells, cells))
    box = np.zeros((N, 4, cells, cells))
    for n, boxes in enumerate(gts):
        for c, cx, cy, w, h in boxes:
            if not 0 <= c < num_classes:
                raise ValueError(f"class {c} outside catalog of {num_classes}")
            i, j = cell_of(cx, cy, cells)
            if obj[n, i, j]:
                continue
            obj[n, i, j] = 1.0
            cls[n, int(c), i, j] = 1.0
            box[n, :, i, j] = (cx * cells - j, cy * cells - i, np.sqrt(w), np.sqrt(h))
    return Targets(obj, cls, box)


def detection_loss(
    raw: Tensor, gts: Sequence[GroundTruth], weights: LossWeights = LossWeights()
) -> Tensor:
    """Objectness BCE over all cells, class BCE and box L1 at positive cells, averaged per image."""
    if raw.ndim != 4 or raw.shape[2] != raw.shape[3] or raw.shape[1] < 6:
        raise ShapeError(f"raw head map must be N x (5+K) x S x S, got {raw.shape}")
    N, ch, S, _ = raw.shape
    if len(gts) != N:
        raise ValueError(f"{len(gts)} ground-truth lists for a batch of {N}")
    K = ch - 5
    t = build_targets(gts, K, S)
    pos = t.obj[:, None]
    obj_term = ops.bce_with_logits(ops.narrow(raw, 1, 0, 1), t.obj[:, None], 1.0)
    cls_term = ops.bce_with_logits(ops.narrow(raw, 1, 5, ch), t.cls, np.broadcast_to(pos, t.cls.shape))
    box_pred = ops.sigmoid(ops.narrow(raw, 1, 1, 5))
    box_term = ops.l1(box_pred, t.box, np.broadcast_to(pos, t.box.shape))
    total = ops.add(
        ops.add(ops.scale(obj_term, weights.obj), ops.scale(cls_term, weights.cls)),
        ops.scale(box_term, weights.box),
    )
    return ops.scale(total, 1.0 / N)
