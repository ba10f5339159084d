"""Line-oriented ``section.key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Every key must be one of the
documented keys in ``SCHEMA``; values are parsed and validated before any
work starts, and :func:`RunConfig.to_text` echoes the effective result.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional, Tuple

from .data import SynthSceneSpec
from .detector import FrsNanoConfig, LossWeights, TrainConfig, Upsampler
from .dysample import Mode
from .mcea import POOLS, BranchId


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _names(s: str) -> Tuple[str, ...]:
    return tuple(p.strip() for p in s.split(",") if p.strip())


def _ints(s: str) -> Tuple[int, ...]:
    return tuple(int(p) for p in _names(s))


def _ints_or_none(s: str):
    return _ints(s) if s else ()


# key -> (parser, default)
SCHEMA: Dict[str, Tuple[Callable[[str], object], object]] = {
    "model.input_size": (int, 96),
    "model.widths": (_ints, (8, 16, 32)),
    "model.classes": (int, 8),
    "model.use_mcea": (_bool, False),
    "model.mcea_branches": (_names, ("width", "height", "channel")),
    "model.mcea_pools": (_names, POOLS),
    "model.upsampler": (str, "bilinear"),
    "model.dysample_mode": (str, "static"),
    "model.dysample_groups": (int, 4),
    "train.epochs": (int, 20),
    "train.batch_size": (int, 16),
    "train.lr0": (float, 0.01),
    "train.lrf": (float, 0.01),
    "train.momentum": (float, 0.937),
    "train.weight_decay": (float, 0.0005),
    "train.grad_clip": (float, 10.0),
    "train.max_steps": (int, 0),
    "train.obj_weight": (float, 1.0),
    "train.cls_weight": (float, 1.0),
    "train.box_weight": (float, 5.0),
    "train.seeds": (_ints_or_none, ()),
    "data.train": (str, ""),
    "data.val": (str, ""),
    "data.count": (int, 100),
    "data.size": (int, 96),
    "data.n_small": (int, 2),
    "data.n_occluded": (int, 1),
    "data.n_regular": (int, 1),
    "data.n_smoke": (int, 1),
    "data.noise": (float, 0.03),
    "data.max_retries": (int, 200),
    "eval.conf_threshold": (float, 0.001),
    "eval.iou_threshold": (float, 0.5),
    "eval.preset": (str, "none"),
}


def parse_lines(text: str, origin: str = "<config>") -> Dict[str, str]:
    out: Dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{ln}: expected 'section.key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{origin}:{ln}: unknown key {key!r}")
        out[key] = value
    return out


def parse_override(item: str) -> Tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"--set expects section.key=value, got {item!r}")
    key, value = (p.strip() for p in item.split("=", 1))
    if key not in SCHEMA:
        raise ConfigError(f"unknown key {key!r} in --set")
    return key, value


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


@dataclass
class RunConfig:
    values: Dict[str, object] = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})
    seed: int = 0

    @classmethod
    def load(
        cls, path: Optional[str] = None, overrides: Iterable[str] = (), seed: Optional[int] = None
    ) -> "RunConfig":
        raw: Dict[str, str] = {}
        if path:
            try:
                with open(path, encoding="utf-8") as fh:
                    raw.update(parse_lines(fh.read(), path))
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for item in overrides:
            k, v = parse_override(item)
            raw[k] = v
        cfg = cls(seed=0 if seed is None else seed)
        for k, v in raw.items():
            try:
                cfg.values[k] = SCHEMA[k][0](v)
            except ValueError as exc:
                raise ConfigError(f"bad value for {k}: {v!r} ({exc})") from None
        cfg.validate()
        return cfg

    def __getitem__(self, key: str):
        return self.values[key]

    def model(self) -> FrsNanoConfig:
        v = self.values
        try:
            branches = tuple(BranchId(b) for b in v["model.mcea_branches"])
            upsampler = Upsampler(v["model.upsampler"])
            mode = Mode(v["model.dysample_mode"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        size = v["model.input_size"]
        return FrsNanoConfig(
            input_size=size,
            widths=v["model.widths"],
            use_mcea=v["model.use_mcea"],
            upsampler=upsampler,
            classes=v["model.classes"],
            cells=size // 8,
            mcea_branches=branches,
            mcea_pools=v["model.mcea_pools"],
            dysample_mode=mode,
            dysample_groups=v["model.dysample_groups"],
        )

    def train(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            epochs=v["train.epochs"],
            batch_size=v["train.batch_size"],
            lr0=v["train.lr0"],
            lrf=v["train.lrf"],
            momentum=v["train.momentum"],
            weight_decay=v["train.weight_decay"],
            seed=self.seed,
            grad_clip=v["train.grad_clip"],
            loss_weights=LossWeights(v["train.obj_weight"], v["train.cls_weight"], v["train.box_weight"]),
        )

    def synth(self) -> SynthSceneSpec:
        v = self.values
        return SynthSceneSpec(
            size=v["data.size"],
            n_small=v["data.n_small"],
            n_occluded=v["data.n_occluded"],
            n_regular=v["data.n_regular"],
            n_smoke=v["data.n_smoke"],
            noise=v["data.noise"],
            seed=self.seed,
            num_classes=v["model.classes"],
            max_retries=v["data.max_retries"],
        )

    def validate(self) -> None:
        """Build every derived config once so conflicts surface before work starts."""
        try:
            if not self.values["model.mcea_branches"]:
                raise ConfigError("model.mcea_branches is empty")
            bad = [p for p in self.values["model.mcea_pools"] if p not in POOLS]
            if bad or not self.values["model.mcea_pools"]:
                raise ConfigError(f"model.mcea_pools must be a non-empty subset of {POOLS}")
            self.model()
            self.train()
            self.synth()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.values["data.count"] < 0:
            raise ConfigError("data.count must be non-negative")
        if self.values["train.max_steps"] < 0:
            raise ConfigError("train.max_steps must be non-negative")
        if self.values["eval.preset"] not in ("none", "labels"):
            raise ConfigError("eval.preset must be 'none' or 'labels'")

    def to_text(self) -> str:
        lines = [f"# effective configuration, seed {self.seed}"]
        lines += [f"{k} = {_fmt(self.values[k])}" for k in SCHEMA]
        return "\n".join(lines) + "\n"

