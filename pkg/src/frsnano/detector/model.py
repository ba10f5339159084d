"""FRS-nano: a CPU-sized detector wiring the attention block and the dynamic upsampler.

Layout (defaults: 96 px input, widths 8/16/32, 12 x 12 cells)::

    stem   conv s2 3->8, conv s2 8->16, conv s2 16->16          (12 x 12)
    stage1 residual block (16)                   -> P3          (12 x 12)
    down   conv s2 16->32                                       ( 6 x  6)
    stage2 residual block (32)                   -> P4          ( 6 x  6)
    neck   upsample P4 x2, concat P3, 1x1 conv -> 32            (12 x 12)
    head   1x1 conv -> 5 + classes

Head channels are ``[objectness, tx, ty, tw, th, class_0 .. class_{k-1}]``.
"""

from __future__ import annotations

import enum
import math
import zlib
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .. import ops
from ..dysample import DysampleParams, Mode, bilinear_upsample, dysample_forward
from ..mcea import POOLS, BranchId, MceaParams, mcea_forward
from ..tensor import ShapeError, Tensor

STEM_STRIDE = 8
TOTAL_STRIDE = 16
OBJ_PRIOR = 0.01


class Upsampler(enum.Enum):
    BILINEAR = "bilinear"
    DYSAMPLE = "dysample"


@dataclass(frozen=True)
class FrsNanoConfig:
    input_size: int = 96
    widths: Tuple[int, int, int] = (8, 16, 32)
    use_mcea: bool = False
    upsampler: Upsampler = Upsampler.BILINEAR
    classes: int = 8
    cells: int = 12
    mcea_branches: Tuple[BranchId, ...] = (BranchId.WIDTH, BranchId.HEIGHT, BranchId.CHANNEL)
    mcea_pools: Tuple[str, ...] = POOLS
    dysample_mode: Mode = Mode.STATIC
    dysample_groups: int = 4

    def __post_init__(self):
        if len(self.widths) != 3 or min(self.widths) < 1:
            raise ValueError(f"widths must be three positive ints, got {self.widths}")
        if self.input_size < TOTAL_STRIDE or self.input_size % TOTAL_STRIDE:
            raise ValueError(f"input_size {self.input_size} must be a positive multiple of {TOTAL_STRIDE}")
        if self.cells != self.input_size // STEM_STRIDE:
            raise ValueError(f"cells must equal input_size / {STEM_STRIDE} = {self.input_size // STEM_STRIDE}")
        if self.classes < 1:
            raise ValueError("classes must be positive")
        if self.use_mcea and not self.mcea_branches:
            raise ValueError("MCEA enabled with an empty branch set")
        if self.upsampler is Upsampler.DYSAMPLE and self.widths[2] % self.dysample_groups:
            raise ValueError(f"dysample groups {self.dysample_groups} must divide width {self.widths[2]}")

    @property
    def head_channels(self) -> int:
        return 5 + self.classes


def _param_rng(seed: int, name: str) -> np.random.Generator:
    # per-name streams keep shared layers identically initialised across variants
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def _conv_init(seed: int, name: str, out_c: int, in_c: int, k: int) -> np.ndarray:
    fan_in = in_c * k * k
    return _param_rng(seed, name).normal(0.0, math.sqrt(2.0 / fan_in), size=(out_c, in_c, k, k))


class FrsNano:
    """Parameters plus forward pass for one :class:`FrsNanoConfig`."""

    def __init__(self, config: FrsNanoConfig, seed: int = 0):
        self.config = config
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        w0, w1, w2 = config.widths
        s = config.cells

        def conv(name, out_c, in_c, k):
            self.params[name + ".weight"] = Tensor(_conv_init(seed, name, out_c, in_c, k), requires_grad=True)
            self.params[name + ".bias"] = Tensor(np.zeros(out_c), requires_grad=True)

        conv("stem.0", w0, 3, 3)
        conv("stem.1", w1, w0, 3)
        conv("stem.2", w1, w1, 3)
        conv("stage1.cv1", w1, w1, 3)
        conv("stage1.cv2", w1, w1, 3)
        conv("down", w2, w1, 3)
        conv("stage2.cv1", w2, w2, 3)
        conv("stage2.cv2", w2, w2, 3)
        conv("neck.fuse", w2, w2 + w1, 1)
        conv("head", config.head_channels, w2, 1)
        bias = np.zeros(config.head_channels)
        bias[0] = -math.log((1 - OBJ_PRIOR) / OBJ_PRIOR)
        self.params["head.bias"] = Tensor(bias, requires_grad=True)

        self.mcea: Dict[str, MceaParams] = {}
        if config.use_mcea:
            for stage, (c, hw) in (("stage1", (w1, s)), ("stage2", (w2, s // 2))):
                p = MceaParams.init(c, hw, hw, config.mcea_branches, config.mcea_pools)
                self.mcea[stage] = p
                for name, t in p.named_tensors(f"{stage}.mcea."):
                    self.params[name] = t

        self.dysample: Optional[DysampleParams] = None
        if config.upsampler is Upsampler.DYSAMPLE:
            self.dysample = DysampleParams(w2, mode=config.dysample_mode, groups=config.dysample_groups)
            for name, t in self.dysample.named_tensors("neck.dysample."):
                self.params[name] = t

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return list(self.params.items())

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def replace_parameters(self, values: Dict[str, np.ndarray]) -> None:
        """Swap in new leaf values (same names and shapes), rebinding sub-module views."""
        for name, arr in values.items():
            self.params[name] = Tensor(arr, requires_grad=True)
        for stage, p in self.mcea.items():
            for b, bp in p.branches.items():
                base = f"{stage}.mcea.{b.value}."
                bp.kernel = self.params[base + "kernel"]
                bp.squeeze.alpha_latent = self.params[base + "alpha_latent"]
                bp.squeeze.beta_latent = self.params[base + "beta_latent"]
                bp.squeeze.gamma_latent = self.params[base + "gamma_latent"]
        if self.dysample is not None:
            for attr in ("offset_weight", "offset_bias", "scope_weight", "scope_bias"):
                key = "neck.dysample." + attr
                if key in self.params:
                    setattr(self.dysample, attr, self.params[key])

    def _conv(self, x: Tensor, name: str, stride: int = 1) -> Tensor:
        w = self.params[name + ".weight"]
        pad = w.shape[-1] // 2
        return ops.conv2d(x, w, self.params[name + ".bias"], stride=stride, padding=pad)

    def block(self, x: Tensor, stage: str) -> Tensor:
        return a2c2f_mcea_lite(x, self, stage)

    def forward(self, images) -> Tensor:
        return nano_forward(images, self)

    __call__ = forward


def a2c2f_mcea_lite(x: Tensor, model: FrsNano, stage: str) -> Tensor:
    """Two 3x3 conv + SiLU layers on a residual branch, gated by MCEA when enabled."""
    c = model.params[stage + ".cv1.weight"].shape[1]
    if x.ndim != 4 or x.shape[1] != c:
        raise ShapeError(f"{stage}: expected N x {c} x H x W input, got {x.shape}")
    r = ops.silu(model._conv(x, stage + ".cv1"))
    r = ops.silu(model._conv(r, stage + ".cv2"))
    if stage in model.mcea:
        r = mcea_forward(r, model.mcea[stage])
    return ops.add(x, r)


def nano_forward(images, model: FrsNano) -> Tensor:
    """Raw head map ``N x (5 + classes) x cells x cells``."""
    cfg = model.config
    x = images if isinstance(images, Tensor) else Tensor(images)
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2:] != (cfg.input_size, cfg.input_size):
        raise ShapeError(f"expected N x 3 x {cfg.input_size} x {cfg.input_size} images, got {x.shape}")
    x = ops.silu(model._conv(x, "stem.0", 2))
    x = ops.silu(model._conv(x, "stem.1", 2))
    x = ops.silu(model._conv(x, "stem.2", 2))
    p3 = model.block(x, "stage1")
    x = ops.silu(model._conv(p3, "down", 2))
    p4 = model.block(x, "stage2")
    if cfg.upsampler is Upsampler.DYSAMPLE:
        up = dysample_forward(p4, model.dysample)
    else:
        up = bilinear_upsample(p4, 2)
    fused = ops.silu(model._conv(ops.concat([up, p3], axis=1), "neck.fuse"))
    return model._conv(fused, "head")
