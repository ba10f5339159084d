"""Label files, dataset manifests, splitting, statistics and synthetic scenes."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

LabelBox = Tuple[int, float, float, float, float]  # class, cx, cy, w, h (normalised)

DEFAULT_CLASSES: Tuple[str, ...] = (
    "Emergency Rescue Fire Truck",
    "Water Tanker Fire Truck",
    "Ladder Fire Truck",  # placeholder truck type
    "Foam Fire Truck",  # placeholder truck type
    "Command Fire Truck",  # placeholder truck type
    "Firefighter",
    "Flames",
    "Smoke",
)

SMALL_AREA = 0.02
MEDIUM_AREA = 0.10


class LabelError(ValueError):
    pass


class SynthError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClassCatalog:
    names: Tuple[str, ...] = DEFAULT_CLASSES

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("class names must be unique")

    def __len__(self):
        return len(self.names)


@dataclass
class AnnotatedImage:
    image_id: str
    width: int
    height: int
    boxes: List[LabelBox] = field(default_factory=list)


def parse_labels(text: str, num_classes: Optional[int] = None) -> List[LabelBox]:
    """Parse ``class cx cy w h`` lines; blank lines are ignored."""
    boxes = []
    for ln, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 5:
            raise LabelError(f"line {ln}: expected 5 fields 'class cx cy w h', got {len(fields)}")
        try:
            cls = int(fields[0])
        except ValueError:
            raise LabelError(f"line {ln}: field 'class' is not an integer: {fields[0]!r}") from None
        if cls < 0 or (num_classes is not None and cls >= num_classes):
            raise LabelError(f"line {ln}: field 'class' out of range: {cls}")
        vals = []
        for name, raw in zip(("cx", "cy", "w", "h"), fields[1:]):
            try:
                v = float(raw)
            except ValueError:
                raise LabelError(f"line {ln}: field '{name}' is not a number: {raw!r}") from None
            if not 0.0 <= v <= 1.0:
                raise LabelError(f"line {ln}: field '{name}' out of range [0, 1]: {v}")
            if name in ("w", "h") and v <= 0.0:
                raise LabelError(f"line {ln}: field '{name}' must be positive")
            vals.append(v)
        boxes.append((cls, *vals))
    return boxes


def serialize_labels(boxes: Sequence[LabelBox]) -> str:
    return "".join(f"{c} {cx!r} {cy!r} {w!r} {h!r}\n" for c, cx, cy, w, h in boxes)


def clamp_box(box: LabelBox) -> LabelBox:
    """Clip a box to the unit square, keeping it in ``cx cy w h`` form."""
    c, cx, cy, w, h = box
    x0, x1 = max(0.0, cx - w / 2), min(1.0, cx + w / 2)
    y0, y1 = max(0.0, cy - h / 2), min(1.0, cy + h / 2)
    if x1 <= x0 or y1 <= y0:
        raise LabelError(f"box {box} lies outside the image")
    return (c, (x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)


# -- manifests -------------------------------------------------------------


def read_manifest(path: str) -> List[Tuple[str, str]]:
    """``(image_path, label_path)`` pairs, resolved against the manifest's directory."""
    root = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{ln}: expected 'image_path label_path'")
            pairs.append(tuple(os.path.join(root, p) for p in parts))
    return pairs


def write_manifest(path: str, pairs: Sequence[Tuple[str, str]]) -> None:
    """Write pairs relative to the manifest's own directory."""
    root = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as fh:
        for img, lab in pairs:
            fh.write(f"{os.path.relpath(img, root)} {os.path.relpath(lab, root)}\n")


def load_manifest_dataset(path: str, num_classes: Optional[int] = None):
    """Images (``N x 3 x H x W``), labels and ids for every manifest entry."""
    images, labels, ids = [], [], []
    for img, lab in read_manifest(path):
        images.append(np.load(img))
        with open(lab, encoding="utf-8") as fh:
            labels.append(parse_labels(fh.read(), num_classes))
        ids.append(os.path.splitext(os.path.basename(img))[0])
    arr = np.stack(images) if images else np.zeros((0, 3, 1, 1))
    return arr, labels, ids


# -- splitting and statistics ---------------------------------------------


def split_dataset(ids: Sequence, seed: int):
    """Seeded 8:1:1 partition: ``floor(0.8n)`` / ``floor(0.1n)`` / remainder."""
    n = len(ids)
    if n == 0:
        raise ValueError("cannot split an empty id list")
    perm = np.random.default_rng(seed).permutation(n)
    n_train, n_val = n * 8 // 10, n // 10
    pick = lambda sl: [ids[i] for i in perm[sl]]  # noqa: E731
    return pick(slice(0, n_train)), pick(slice(n_train, n_train + n_val)), pick(slice(n_train + n_val, n))


@dataclass
class StatsReport:
    class_counts: List[int]
    buckets: Dict[str, int]
    images: int

    @property
    def total(self) -> int:
        return sum(self.class_counts)

    def to_text(self, catalog: ClassCatalog = ClassCatalog()) -> str:
        lines = [f"images {self.images}", f"instances {self.total}"]
        for i, n in enumerate(self.class_counts):
            name = catalog.names[i] if i < len(catalog) else str(i)
            lines.append(f"class {i} {name!r} {n}")
        for k in ("small", "medium", "large"):
            lines.append(f"size {k} {self.buckets[k]}")
        return "\n".join(lines) + "\n"


def size_bucket(w: float, h: float) -> str:
    area = w * h
    if area < SMALL_AREA:
        return "small"
    return "medium" if area < MEDIUM_AREA else "large"


def stats_report(dataset: Sequence[AnnotatedImage], num_classes: int = len(DEFAULT_CLASSES)) -> StatsReport:
    counts = [0] * num_classes
    buckets = {"small": 0, "medium": 0, "large": 0}
    for item in dataset:
        for c, _, _, w, h in item.boxes:
            if not 0 <= c < num_classes:
                raise LabelError(f"image {item.image_id}: class {c} outside catalog")
            counts[c] += 1
            buckets[size_bucket(w, h)] += 1
    return StatsReport(counts, buckets, len(dataset))


# -- synthetic scenes -------------------------------------------------------

# per-class base shade and a marking that separates lookalike trucks
_SHADES = np.array([
    [0.90, 0.15, 0.15],
    [0.85, 0.25, 0.10],
    [0.90, 0.15, 0.25],
    [0.80, 0.30, 0.20],
    [0.85, 0.20, 0.05],
    [0.20, 0.30, 0.85],
    [1.00, 0.75, 0.10],
    [0.55, 0.55, 0.60],
])
_MARKS = ("none", "hstripe", "vstripe", "dot", "corner", "none", "dot", "none")
_ASPECT = (1.8, 2.2, 2.6, 1.6, 1.3, 0.5, 1.0, 1.2)
_OCCLUDER_SHADE = np.array([0.45, 0.42, 0.40])
_SMOKE_SHADE = np.array([0.70, 0.70, 0.72])


@dataclass(frozen=True)
class SynthSceneSpec:
    size: int = 96
    n_small: int = 2
    n_occluded: int = 1
    n_regular: int = 1
    n_smoke: int = 1
    noise: float = 0.03
    seed: int = 0
    num_classes: int = len(DEFAULT_CLASSES)
    max_retries: int = 200

    def __post_init__(self):
        if min(self.n_small, self.n_occluded, self.n_regular, self.n_smoke) < 0:
            raise ValueError("object counts must be non-negative")
        if self.size < 16 or self.noise < 0 or not 1 <= self.num_classes <= len(_SHADES):
            raise ValueError("invalid synthetic scene spec")


@dataclass
class Placed:
    class_id: int
    rect: Tuple[int, int, int, int]  # x0, y0, x1, y1 in pixels, exclusive end
    occluder: Optional[Tuple[int, int, int, int]] = None


def _rect_iou(a, b) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)


def _touches(a, b, margin=1) -> bool:
    return not (a[2] + margin <= b[0] or b[2] + margin <= a[0] or a[3] + margin <= b[1] or b[3] + margin <= a[1])


def plan_scene(spec: SynthSceneSpec) -> List[Placed]:
    """Choose classes, target rectangles and occluders; pure function of ``spec``."""
    rng = np.random.default_rng(spec.seed)
    S = spec.size
    placed: List[Placed] = []
    blocked: List[Tuple[int, int, int, int]] = []

    def dims(cls, lo, hi):
        # area fractions in [lo, hi) of the image, checked after rounding
        for _ in range(spec.max_retries):
            area = rng.uniform(lo, hi) * S * S
            aspect = _ASPECT[cls] * rng.uniform(0.85, 1.15)
            w = int(round(np.sqrt(area * aspect)))
            h = int(round(np.sqrt(area / aspect)))
            if 2 <= w < S and 2 <= h < S and lo * S * S <= w * h < hi * S * S:
                return w, h
        raise SynthError(f"could not size a class-{cls} target")

    def put(w, h, extra=None):
        for _ in range(spec.max_retries):
            x0 = int(rng.integers(0, S - w + 1))
            y0 = int(rng.integers(0, S - h + 1))
            rect = (x0, y0, x0 + w, y0 + h)
            occ = extra(rect) if extra else None
            if extra and occ is None:
                continue
            shapes = [rect] + ([occ] if occ else [])
            if any(_touches(s, b) for s in shapes for b in blocked):
                continue
            return rect, occ
        raise SynthError("could not place target within the occlusion budget")

    def occluder_for(rect):
        w, h = rect[2] - rect[0], rect[3] - rect[1]
        for _ in range(20):
            dx = int(rng.integers(-w // 2, w // 2 + 1))
            dy = int(rng.integers(-h // 2, h // 2 + 1))
            if dx == 0 and dy == 0:
                continue
            occ = (rect[0] + dx, rect[1] + dy, rect[2] + dx, rect[3] + dy)
            if occ[0] < 0 or occ[1] < 0 or occ[2] > S or occ[3] > S:
                continue
            if 0.3 <= _rect_iou(rect, occ) <= 0.6:
                return occ
        return None

    kinds = ["small"] * spec.n_small + ["occluded"] * spec.n_occluded + ["regular"] * spec.n_regular
    for kind in kinds:
        cls = int(rng.integers(0, spec.num_classes))
        if kind == "small":
            w, h = dims(cls, 0.004, SMALL_AREA)
            rect, occ = put(w, h)
        elif kind == "occluded":
            w, h = dims(cls, 0.025, 0.05)
            rect, occ = put(w, h, occluder_for)
        else:
            w, h = dims(cls, SMALL_AREA, 0.08)
            rect, occ = put(w, h)
        placed.append(Placed(cls, rect, occ))
        blocked.append(rect)
        if occ:
            blocked.append(occ)
    return placed


def _render_target(img, cls, rect):
    x0, y0, x1, y1 = rect
    img[:, y0:y1, x0:x1] = _SHADES[cls][:, None, None]
    w, h = x1 - x0, y1 - y0
    mark = _MARKS[cls]
    light = np.array([0.95, 0.95, 0.95])[:, None, None]
    if mark == "hstripe" and h >= 3:
        img[:, y0 + h // 2, x0:x1] = light[:, :, 0]
    elif mark == "vstripe" and w >= 3:
        img[:, y0:y1, x0 + w // 2] = light[:, :, 0]
    elif mark == "dot":
        img[:, y0 + h // 2, x0 + w // 2] = light[:, 0, 0]
    elif mark == "corner":
        img[:, y0, x0:x1] = light[:, :, 0]
        img[:, y0:y1, x0] = light[:, :, 0]


def synth_generate(spec: SynthSceneSpec, image_id: str = "synth"):
    """Render a ``3 x size x size`` scene in [0, 1] and its pre-occlusion labels."""
    rng = np.random.default_rng([spec.seed, 1])
    plan = plan_scene(spec)
    S = spec.size
    yy, xx = np.mgrid[0:S, 0:S] / S
    base = rng.uniform(0.25, 0.45, size=3)
    tilt = rng.uniform(-0.1, 0.1, size=(3, 2))
    img = base[:, None, None] + tilt[:, 0, None, None] * xx + tilt[:, 1, None, None] * yy
    for p in plan:
        _render_target(img, p.class_id, p.rect)
    for p in plan:
        if p.occluder:
            x0, y0, x1, y1 = p.occluder
            img[:, y0:y1, x0:x1] = (_OCCLUDER_SHADE + rng.uniform(-0.05, 0.05, 3))[:, None, None]
    for _ in range(spec.n_smoke):
        cx, cy = rng.uniform(0, 1, size=2)
        sigma = rng.uniform(0.06, 0.15)
        alpha = rng.uniform(0.25, 0.5) * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))
        img = img * (1 - alpha) + alpha * _SMOKE_SHADE[:, None, None]
    if spec.noise:
        img = img + rng.normal(0.0, spec.noise, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    boxes = [
        (p.class_id, (p.rect[0] + p.rect[2]) / 2 / S, (p.rect[1] + p.rect[3]) / 2 / S,
         (p.rect[2] - p.rect[0]) / S, (p.rect[3] - p.rect[1]) / S)
        for p in plan
    ]
    return img, AnnotatedImage(image_id, S, S, boxes)


def synth_dataset(count: int, base: SynthSceneSpec, seed: int):
    """``count`` scenes with per-image seeds derived from ``seed``."""
    images, labels, ids = [], [], []
    for i in range(count):
        spec = SynthSceneSpec(**{**base.__dict__, "seed": seed * 1_000_003 + i})
        img, ann = synth_generate(spec, f"{seed}_{i:06d}")
        images.append(img)
        labels.append(ann.boxes)
        ids.append(ann.image_id)
    arr = np.stack(images) if images else np.zeros((0, 3, base.size, base.size))
    return arr, labels, ids
