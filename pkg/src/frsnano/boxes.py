"""Box carrier types shared by the detector, metrics and data tooling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

Box = Tuple[float, float, float, float]


@dataclass(frozen=True)
class Detection:
    """One predicted object; ``box`` is ``(cx, cy, w, h)`` normalised to the image."""

    class_id: int
    confidence: float
    box: Box

    def __post_init__(self):
        cx, cy, w, h = self.box
        if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
            raise ValueError(f"box centre must lie in [0, 1], got {(cx, cy)}")
        if not (w > 0 and h > 0):
            raise ValueError(f"box extents must be positive, got {(w, h)}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


def cxcywh_to_xyxy(box: Box) -> Box:
    cx, cy, w, h = box
    return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
