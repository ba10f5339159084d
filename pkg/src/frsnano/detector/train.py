"""Momentum SGD, the linear learning-rate schedule, and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..metrics import EvalReport, evaluate
from ..tensor import backward
from .decode import decode_and_nms
from .loss import GroundTruth, LossWeights, detection_loss
from .model import FrsNano

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr0: float = 0.01
    lrf: float = 0.01
    momentum: float = 0.937
    weight_decay: float = 0.0005
    seed: int = 0
    grad_clip: float = 10.0  # global L2 norm; 0 disables
    loss_weights: LossWeights = LossWeights()

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not (self.lr0 > 0 and 0 < self.lrf <= 1):
            raise ValueError("need lr0 > 0 and 0 < lrf <= 1 so the rate never increases")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be non-negative")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("momentum must lie in [0, 1) and weight_decay be non-negative")


def lr_schedule(epoch: float, total: float, lr0: float, lrf: float) -> float:
    """Linear decay from ``lr0`` at epoch 0 to ``lr0 * lrf`` at epoch ``total``."""
    if not 0 <= epoch <= total:
        raise ValueError(f"epoch {epoch} outside [0, {total}]")
    return lr0 * ((1 - epoch / total) * (1 - lrf) + lrf)


def train_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    velocity: Sequence[np.ndarray],
    config: TrainConfig,
    lr: float,
):
    """One momentum-SGD update; returns ``(new_params, new_velocity)``.

    ``v <- momentum * v + (g + weight_decay * theta)``, ``theta <- theta - lr * v``.
    """
    new_p, new_v = [], []
    for theta, g, v in zip(params, grads, velocity):
        if not theta.shape == g.shape == v.shape:
            raise ValueError(f"shape mismatch: param {theta.shape}, grad {g.shape}, velocity {v.shape}")
        v = config.momentum * v + (g + config.weight_decay * theta)
        new_v.append(v)
        new_p.append(theta - lr * v)
    return new_p, new_v


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> List[np.ndarray]:
    """Rescale ``grads`` so their joint L2 norm is at most ``max_norm`` (0 = no-op)."""
    if max_norm <= 0:
        return list(grads)
    norm = math.sqrt(math.fsum(float(np.vdot(g, g)) for g in grads))
    if norm <= max_norm:
        return list(grads)
    return [g * (max_norm / norm) for g in grads]


@dataclass
class Dataset:
    images: np.ndarray  # N x 3 x H x W
    labels: List[GroundTruth]
    ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.ids:
            self.ids = [f"{i:06d}" for i in range(len(self.labels))]
        if len(self.images) != len(self.labels) or len(self.ids) != len(self.labels):
            raise ValueError("images, labels and ids must have the same length")

    def __len__(self):
        return len(self.labels)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    loss: float
    val_map50: Optional[float]

    def line(self) -> str:
        val = "nan" if self.val_map50 is None else repr(self.val_map50)
        return f"epoch={self.epoch} lr={self.lr!r} loss={self.loss!r} val_mAP50={val}"


def predict(model: FrsNano, images: np.ndarray, batch_size: int = 32, conf_threshold: float = 0.001,
            iou_threshold: float = 0.5):
    dets = []
    for start in range(0, len(images), batch_size):
        raw = model(images[start : start + batch_size])
        dets.extend(decode_and_nms(raw, conf_threshold, iou_threshold))
    return dets


def evaluate_model(model: FrsNano, data: Dataset, conf_threshold: float = 0.001,
                   iou_threshold: float = 0.5) -> EvalReport:
    dets = predict(model, data.images, conf_threshold=conf_threshold, iou_threshold=iou_threshold)
    preds = {i: d for i, d in zip(data.ids, dets)}
    gts = {i: [(c, (cx, cy, w, h)) for c, cx, cy, w, h in lab] for i, lab in zip(data.ids, data.labels)}
    return evaluate(preds, gts, model.config.classes)


def fit(
    model: FrsNano,
    train: Dataset,
    config: TrainConfig,
    val: Optional[Dataset] = None,
    on_epoch: Optional[Callable[[EpochLog, FrsNano], None]] = None,
    max_steps: Optional[int] = None,
) -> List[EpochLog]:
    """Train ``model`` in place; logs mean training loss (and val mAP50) per epoch."""
    names = [n for n, _ in model.named_parameters()]
    velocity = [np.zeros(t.shape) for _, t in model.named_parameters()]
    logs: List[EpochLog] = []
    steps = 0
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config.epochs, config.lr0, config.lrf)
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            raw = model(train.images[idx])
            loss = detection_loss(raw, [train.labels[i] for i in idx], config.loss_weights)
            if not np.isfinite(loss.item()):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, step {steps}")
            leaves = model.parameters()
            for t in leaves:
                t.grad = None
            backward(loss)
            grads = [t.grad if t.grad is not None else np.zeros(t.shape) for t in leaves]
            grads = clip_grad_norm(grads, config.grad_clip)
            new_p, velocity = train_step([t.data for t in leaves], grads, velocity, config, lr)
            model.replace_parameters(dict(zip(names, new_p)))
            losses.append(loss.item())
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        val_map = evaluate_model(model, val).map50 if val is not None and len(val) else None
        log = EpochLog(epoch, lr, float(np.mean(losses)), val_map)
        logger.info(log.line())
        logs.append(log)
        if on_epoch is not None:
            on_epoch(log, model)
        if max_steps is not None and steps >= max_steps:
            break
    return logs
