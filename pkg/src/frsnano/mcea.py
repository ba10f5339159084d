"""Multi-dimensional Collaborative Enhancement Attention.

Three parallel gating branches look at a ``C x H x W`` map along its width,
height and channel axes. Each branch rotates the map so the axis of interest
leads, squeezes every leading slice to one number with a learnable mix of
average, standard-deviation and max pooling, runs a short 1-D convolution
over the resulting descriptor, turns it into a sigmoid gate, rescales the
rotated map and rotates back. The branch outputs are averaged.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor


class BranchId(enum.Enum):
    WIDTH = "width"
    HEIGHT = "height"
    CHANNEL = "channel"


# (C,H,W) -> rotated layout; all three are involutions
ROTATIONS: Dict[BranchId, Tuple[int, int, int]] = {
    BranchId.WIDTH: (2, 1, 0),
    BranchId.HEIGHT: (1, 0, 2),
    BranchId.CHANNEL: (0, 1, 2),
}

POOLS = ("avg", "std", "max")


def kernel_size_for(length: int) -> int:
    """Adaptive odd excitation kernel length, floored at 3."""
    t = int(abs(math.log2(max(length, 1)) / 2 + 0.5))
    k = t if t % 2 else t + 1
    return max(k, 3)


@dataclass
class TripleSqueezeParams:
    """Unconstrained latents behind the pooling weights alpha, beta, gamma."""

    alpha_latent: Tensor = field(default_factory=lambda: Tensor(0.0, requires_grad=True))
    beta_latent: Tensor = field(default_factory=lambda: Tensor(0.0, requires_grad=True))
    gamma_latent: Tensor = field(default_factory=lambda: Tensor(0.0, requires_grad=True))

    @classmethod
    def from_weights(cls, alpha: float, beta: float, gamma: float) -> "TripleSqueezeParams":
        def logit(p):
            if not 0.0 < p < 1.0:
                raise ValueError(f"pooling weight must lie in (0, 1), got {p}")
            return math.log(p / (1.0 - p))

        return cls(
            Tensor(logit(alpha), requires_grad=True),
            Tensor(logit(beta), requires_grad=True),
            Tensor(logit(gamma), requires_grad=True),
        )

    def latents(self) -> List[Tensor]:
        return [self.alpha_latent, self.beta_latent, self.gamma_latent]

    def weights(self) -> Tuple[float, float, float]:
        return tuple(ops.sigmoid(t).item() for t in self.latents())


@dataclass
class BranchParams:
    squeeze: TripleSqueezeParams
    kernel: Tensor


@dataclass
class MceaParams:
    branches: Dict[BranchId, BranchParams]
    enabled: Tuple[BranchId, ...] = (BranchId.WIDTH, BranchId.HEIGHT, BranchId.CHANNEL)
    pools: Tuple[str, ...] = POOLS

    def __post_init__(self):
        if not self.enabled:
            raise ValueError("MCEA needs at least one enabled branch")
        missing = [b.value for b in self.enabled if b not in self.branches]
        if missing:
            raise ValueError(f"no parameters for enabled branches {missing}")
        bad = [p for p in self.pools if p not in POOLS]
        if bad or not self.pools:
            raise ValueError(f"pools must be a non-empty subset of {POOLS}, got {self.pools}")
        for b in self.enabled:
            k = self.branches[b].kernel.shape[0]
            if k % 2 == 0:
                raise ValueError(f"{b.value} excitation kernel must have odd length, got {k}")

    @classmethod
    def init(
        cls,
        channels: int,
        height: int,
        width: int,
        enabled: Iterable[BranchId] = tuple(BranchId),
        pools: Sequence[str] = POOLS,
    ) -> "MceaParams":
        """Identity (centered-delta) kernels and alpha = beta = gamma = 0.5."""
        lengths = {BranchId.WIDTH: width, BranchId.HEIGHT: height, BranchId.CHANNEL: channels}
        branches = {}
        for b in BranchId:
            k = kernel_size_for(lengths[b])
            delta = np.zeros(k)
            delta[k // 2] = 1.0
            branches[b] = BranchParams(TripleSqueezeParams(), Tensor(delta, requires_grad=True))
        return cls(branches, tuple(enabled), tuple(pools))

    def named_tensors(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        out = []
        for b in BranchId:
            bp = self.branches.get(b)
            if bp is None:
                continue
            base = f"{prefix}{b.value}."
            out.append((base + "kernel", bp.kernel))
            out.append((base + "alpha_latent", bp.squeeze.alpha_latent))
            out.append((base + "beta_latent", bp.squeeze.beta_latent))
            out.append((base + "gamma_latent", bp.squeeze.gamma_latent))
        return out

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_tensors()]


def _axes(b: BranchId, rank: int) -> Tuple[int, ...]:
    perm = ROTATIONS[b]
    if rank == 3:
        return perm
    return (0,) + tuple(i + 1 for i in perm)


def rotate(f: Tensor, b: BranchId) -> Tensor:
    if f.ndim not in (3, 4):
        raise ShapeError(f"rotate expects C x H x W (optionally batched), got shape {f.shape}")
    if b is BranchId.CHANNEL:
        return f
    return ops.permute(f, _axes(b, f.ndim))


def inverse_rotate(f: Tensor, b: BranchId) -> Tensor:
    # every rotation here is its own inverse
    return rotate(f, b)


def triple_squeeze(fhat: Tensor, p: TripleSqueezeParams, pools: Sequence[str] = POOLS) -> Tensor:
    """Adaptive pooling descriptor: mean of the pools plus each pool times its weight."""
    reducers = {
        "avg": (ops.reduce_mean_tail2, p.alpha_latent),
        "std": (ops.reduce_std_tail2, p.beta_latent),
        "max": (ops.reduce_max_tail2, p.gamma_latent),
    }
    pooled = [(reducers[name][0](fhat), reducers[name][1]) for name in pools]
    base = pooled[0][0]
    for d, _ in pooled[1:]:
        base = ops.add(base, d)
    out = ops.scale(base, 1.0 / len(pooled))
    for d, latent in pooled:
        out = ops.add(out, ops.mul(d, ops.sigmoid(latent)))
    return out


def excite(descriptor: Tensor, kernel: Tensor) -> Tensor:
    shape = descriptor.shape
    if shape[-2:] != (1, 1):
        raise ShapeError(f"excite expects an L x 1 x 1 descriptor, got shape {shape}")
    flat = ops.reshape(descriptor, shape[:-2])
    return ops.reshape(ops.conv1d_samepad(flat, kernel), shape)


def branch_gate(f: Tensor, b: BranchId, params: BranchParams, pools: Sequence[str] = POOLS) -> Tensor:
    """Sigmoid attention coefficients of one branch, shaped ``L x 1 x 1``."""
    fhat = rotate(f, b)
    return ops.sigmoid(excite(triple_squeeze(fhat, params.squeeze, pools), params.kernel))


def branch_forward(f: Tensor, b: BranchId, params: BranchParams, pools: Sequence[str] = POOLS) -> Tensor:
    fhat = rotate(f, b)
    gate = ops.sigmoid(excite(triple_squeeze(fhat, params.squeeze, pools), params.kernel))
    return inverse_rotate(ops.broadcast_mul(gate, fhat), b)


def mcea_forward(f: Tensor, params: MceaParams) -> Tensor:
    """Average of the enabled branch outputs; shape is preserved.

    A rank-4 ``N x C x H x W`` batch is treated as N independent samples
    sharing ``params``.
    """
    if f.ndim not in (3, 4):
        raise ShapeError(f"mcea_forward expects C x H x W (optionally batched), got shape {f.shape}")
    outs = [branch_forward(f, b, params.branches[b], params.pools) for b in params.enabled]
    if len(outs) == 1:
        return outs[0]
    acc = outs[0]
    for o in outs[1:]:
        acc = ops.add(acc, o)
    return ops.scale(acc, 1.0 / len(outs))
