"""Sampling-based dynamic upsampling.

A per-site linear projection predicts sub-pixel offsets at low resolution,
pixel shuffle lifts them to the output resolution, and the input is
bilinearly resampled at ``base grid + offsets``. With all projection weights
at zero the module is exactly half-pixel-center bilinear upsampling.

Coordinates are in input pixels with pixel ``(u, v)`` centred at
``x = v, y = u``. Positions are clamped to ``[-0.5, W-0.5] x [-0.5, H-0.5]``
and neighbour indices are clamped to the valid range.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import ops
from .ops import pixel_shuffle, pixel_unshuffle  # noqa: F401  (re-exported)
from .tensor import ShapeError, Tensor


class Mode(enum.Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


@dataclass
class DysampleParams:
    channels: int
    mode: Mode = Mode.STATIC
    scale: int = 2
    groups: int = 4
    static_range: float = 0.25
    dynamic_range: float = 0.5
    offset_weight: Optional[Tensor] = None  # (2*g*s*s) x C x 1 x 1
    offset_bias: Optional[Tensor] = None
    scope_weight: Optional[Tensor] = None
    scope_bias: Optional[Tensor] = None

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        if self.groups < 1 or self.channels % self.groups:
            raise ValueError(f"groups={self.groups} must divide channels={self.channels}")
        out = 2 * self.groups * self.scale * self.scale
        shape = (out, self.channels, 1, 1)
        if self.offset_weight is None:
            self.offset_weight = Tensor(np.zeros(shape), requires_grad=True)
        if self.offset_bias is None:
            self.offset_bias = Tensor(np.zeros(out), requires_grad=True)
        if self.mode is Mode.DYNAMIC:
            if self.scope_weight is None:
                self.scope_weight = Tensor(np.zeros(shape), requires_grad=True)
            if self.scope_bias is None:
                self.scope_bias = Tensor(np.zeros(out), requires_grad=True)
        for t in (self.offset_weight, self.scope_weight):
            if t is not None and t.shape != shape:
                raise ShapeError(f"projection weight must have shape {shape}, got {t.shape}")

    def named_tensors(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        out = [(prefix + "offset_weight", self.offset_weight), (prefix + "offset_bias", self.offset_bias)]
        if self.mode is Mode.DYNAMIC:
            out += [(prefix + "scope_weight", self.scope_weight), (prefix + "scope_bias", self.scope_bias)]
        return out

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_tensors()]


def base_grid(H: int, W: int, s: int) -> Tuple[np.ndarray, np.ndarray]:
    """Input-space centres of the ``sH x sW`` output pixels, as ``(x, y)`` arrays."""
    if min(H, W, s) < 1:
        raise ValueError(f"H, W, s must be >= 1, got {(H, W, s)}")
    xs = (np.arange(W * s) + 0.5) / s - 0.5
    ys = (np.arange(H * s) + 0.5) / s - 0.5
    gx = np.broadcast_to(xs[None, :], (H * s, W * s)).copy()
    gy = np.broadcast_to(ys[:, None], (H * s, W * s)).copy()
    return gx, gy


def _batched(x: Tensor) -> Tuple[Tensor, bool]:
    if x.ndim == 3:
        return ops.reshape(x, (1,) + x.shape), True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected C x H x W (optionally batched), got shape {x.shape}")


def gen_offsets(x: Tensor, p: DysampleParams) -> Tensor:
    """Offsets ``O`` in output-grid steps, shape ``(2g) x sH x sW``.

    Channels ``[0, g)`` hold x offsets and ``[g, 2g)`` y offsets, one pair per group.
    """
    xb, squeeze = _batched(x)
    if xb.shape[1] != p.channels:
        raise ShapeError(f"gen_offsets: input has {xb.shape[1]} channels, params expect {p.channels}")
    raw = ops.pixel_shuffle(ops.conv2d(xb, p.offset_weight, p.offset_bias), p.scale)
    if p.mode is Mode.STATIC:
        off = ops.scale(raw, p.static_range)
    else:
        scope = ops.pixel_shuffle(ops.conv2d(xb, p.scope_weight, p.scope_bias), p.scale)
        off = ops.mul(ops.scale(ops.sigmoid(scope), p.dynamic_range), raw)
    if squeeze:
        off = ops.reshape(off, off.shape[1:])
    return off


def grid_resample_bilinear(x: Tensor, gx: Tensor, gy: Tensor, groups: int) -> Tensor:
    """Bilinear resampling of ``x`` at positions ``(gx, gy)``.

    ``x`` is ``C x H x W`` (or ``N x C x H x W``); ``gx``/``gy`` are
    ``g x Ho x Wo`` (or ``N x g x Ho x Wo``), one sheet per contiguous
    channel group. Differentiable in ``x`` and in both coordinate sheets.
    """
    xb, squeeze = _batched(x)
    N, C, H, W = xb.shape
    g = int(groups)
    if g < 1 or C % g:
        raise ShapeError(f"groups={g} must divide channels={C}")
    sx, sy = gx.data, gy.data
    if squeeze:
        sx, sy = sx[None], sy[None]
    if sx.shape != sy.shape or sx.ndim != 4 or sx.shape[:2] != (N, g):
        raise ShapeError(f"grid sheets {gx.shape}/{gy.shape} do not match input {x.shape} with {g} groups")
    if not (np.all(np.isfinite(sx)) and np.all(np.isfinite(sy))):
        raise ValueError("grid positions must be finite")
    Ho, Wo = sx.shape[2:]
    cg = C // g

    px = np.clip(sx, -0.5, W - 0.5)
    py = np.clip(sy, -0.5, H - 0.5)
    inx = (sx > -0.5) & (sx < W - 0.5)
    iny = (sy > -0.5) & (sy < H - 0.5)
    x0 = np.floor(px)
    y0 = np.floor(py)
    wx = px - x0
    wy = py - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    ix0 = np.clip(x0, 0, W - 1)
    ix1 = np.clip(x0 + 1, 0, W - 1)
    iy0 = np.clip(y0, 0, H - 1)
    iy1 = np.clip(y0 + 1, 0, H - 1)

    src = xb.data.reshape(N, g, cg, H * W)
    corners = [iy0 * W + ix0, iy0 * W + ix1, iy1 * W + ix0, iy1 * W + ix1]  # N,g,Ho,Wo each

    def gather(idx):
        flat = np.broadcast_to(idx.reshape(N, g, 1, Ho * Wo), (N, g, cg, Ho * Wo))
        return np.take_along_axis(src, flat, axis=-1).reshape(N, g, cg, Ho, Wo)

    v00, v01, v10, v11 = (gather(c) for c in corners)
    wx_, wy_ = wx[:, :, None], wy[:, :, None]
    top = v00 + wx_ * (v01 - v00)
    bot = v10 + wx_ * (v11 - v10)
    out = top + wy_ * (bot - top)

    def vjp(gout):
        gg = gout.reshape(N, g, cg, Ho, Wo)
        weights = [(1 - wy_) * (1 - wx_), (1 - wy_) * wx_, wy_ * (1 - wx_), wy_ * wx_]
        base = (np.arange(N * g * cg) * (H * W)).reshape(N, g, cg, 1, 1)
        gsrc = np.zeros(N * g * cg * H * W)
        for idx, wgt in zip(corners, weights):
            lin = base + idx[:, :, None]
            gsrc += np.bincount(lin.reshape(-1), weights=(gg * wgt).reshape(-1), minlength=gsrc.size)
        dx = ((1 - wy_) * (v01 - v00) + wy_ * (v11 - v10)) * gg
        dy = (bot - top) * gg
        gpx = np.where(inx, dx.sum(axis=2), 0.0)
        gpy = np.where(iny, dy.sum(axis=2), 0.0)
        if squeeze:
            gpx, gpy = gpx[0], gpy[0]
        return gsrc.reshape(x.shape), gpx, gpy

    out = out.reshape(N, C, Ho, Wo)
    if squeeze:
        out = out[0]
    return Tensor(out, parents=(x, gx, gy), vjp=vjp)


def sampling_grid(offsets: Tensor, H: int, W: int, p: DysampleParams) -> Tuple[Tensor, Tensor]:
    """``S = base_grid + O / s`` split into per-group x and y sheets."""
    g, s = p.groups, p.scale
    bx, by = base_grid(H, W, s)
    lead = offsets.shape[:-3]
    ox = ops.narrow(offsets, -3, 0, g)
    oy = ops.narrow(offsets, -3, g, 2 * g)
    gx = ops.add(ops.scale(ox, 1.0 / s), Tensor(np.broadcast_to(bx, lead + (g,) + bx.shape)))
    gy = ops.add(ops.scale(oy, 1.0 / s), Tensor(np.broadcast_to(by, lead + (g,) + by.shape)))
    return gx, gy


def dysample_forward(x: Tensor, p: DysampleParams) -> Tensor:
    """Upsample ``C x H x W`` (or a batch) to ``C x sH x sW``."""
    H, W = x.shape[-2:]
    gx, gy = sampling_grid(gen_offsets(x, p), H, W, p)
    return grid_resample_bilinear(x, gx, gy, p.groups)


def bilinear_upsample(x: Tensor, s: int) -> Tensor:
    """Fixed half-pixel-center bilinear upsampling (the zero-offset special case)."""
    H, W = x.shape[-2:]
    bx, by = base_grid(H, W, s)
    lead = x.shape[:-3]
    gx = Tensor(np.broadcast_to(bx, lead + (1,) + bx.shape))
    gy = Tensor(np.broadcast_to(by, lead + (1,) + by.shape))
    return grid_resample_bilinear(x, gx, gy, 1)
