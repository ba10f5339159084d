"""Differentiable operators over :class:`~frsnano.tensor.Tensor`.

Every function here returns a new tensor whose ``vjp`` maps an upstream
gradient (shaped like the output) to one gradient per parent (shaped like
that parent). Nothing broadcasts implicitly except the two documented cases:
a single-element operand in the binary elementwise ops, and an ``L x 1 x 1``
gate in :func:`broadcast_mul`.

Reductions named ``*_tail2`` act on the last two axes of a rank-3
``L x A x B`` tensor, or of a rank-4 ``N x L x A x B`` batch.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor

Operand = Union[Tensor, float, int, np.ndarray]

STD_GRAD_FLOOR = 1e-12

_SIG_LO = np.finfo(np.float64).tiny
_SIG_HI = 1.0 - np.finfo(np.float64).epsneg


def as_tensor(x: Operand) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _binary_operands(a: Operand, b: Operand, op: str) -> Tuple[Tensor, Tensor, bool]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return a, b, False
    if b.size == 1:
        return a, b, True
    raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _reduce_like(g: np.ndarray, b: Tensor, b_scalar: bool) -> np.ndarray:
    return np.full(b.shape, g.sum()) if b_scalar else g


def add(a: Operand, b: Operand) -> Tensor:
    a, b, b_scalar = _binary_operands(a, b, "add")
    return Tensor(
        a.data + (b.data.reshape(()) if b_scalar else b.data),
        parents=(a, b),
        vjp=lambda g: (g, _reduce_like(g, b, b_scalar)),
    )


def sub(a: Operand, b: Operand) -> Tensor:
    a, b, b_scalar = _binary_operands(a, b, "sub")
    return Tensor(
        a.data - (b.data.reshape(()) if b_scalar else b.data),
        parents=(a, b),
        vjp=lambda g: (g, -_reduce_like(g, b, b_scalar)),
    )


def mul(a: Operand, b: Operand) -> Tensor:
    a, b, b_scalar = _binary_operands(a, b, "mul")
    bv = b.data.reshape(()) if b_scalar else b.data

    def vjp(g):
        gb = g * a.data
        return g * bv, (np.full(b.shape, gb.sum()) if b_scalar else gb)

    return Tensor(a.data * bv, parents=(a, b), vjp=vjp)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor(a.data * c, parents=(a,), vjp=lambda g: (g * c,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    # keep the open-interval guarantee even where float64 saturates
    s = np.clip(s, _SIG_LO, _SIG_HI)
    return Tensor(s, parents=(a,), vjp=lambda g: (g * s * (1.0 - s),))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise ValueError("sqrt: negative input")
    r = np.sqrt(a.data)

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(r > 0, g / (2.0 * np.where(r > 0, r, 1.0)), 0.0)
        return (out,)

    return Tensor(r, parents=(a,), vjp=vjp)


def silu(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor(x * s, parents=(a,), vjp=lambda g: (g * s * (1.0 + x * (1.0 - s)),))


def total(a: Tensor) -> Tensor:
    """Sum of all elements as a single-element tensor."""
    return Tensor(a.data.sum(), parents=(a,), vjp=lambda g: (np.full(a.shape, g.reshape(-1)[0]),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    return Tensor(a.data.reshape(shape), parents=(a,), vjp=lambda g: (g.reshape(a.shape),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(i) for i in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ValueError(f"invalid permutation {axes} for rank-{a.ndim} tensor")
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return Tensor(out, parents=(a,), vjp=lambda g: (np.ascontiguousarray(g.transpose(inverse)),))


def permute3(a: Tensor, axes: Sequence[int]) -> Tensor:
    if a.ndim != 3:
        raise ShapeError(f"permute3 needs a rank-3 tensor, got shape {a.shape}")
    return permute(a, axes)


def _check_tail2(a: Tensor, op: str):
    if a.ndim not in (3, 4):
        raise ShapeError(f"{op}: expected L x A x B (or N x L x A x B), got shape {a.shape}")


def reduce_mean_tail2(a: Tensor) -> Tensor:
    _check_tail2(a, "reduce_mean_tail2")
    n = a.shape[-1] * a.shape[-2]
    out = a.data.sum(axis=(-2, -1), keepdims=True) / n
    return Tensor(out, parents=(a,), vjp=lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def reduce_std_tail2(a: Tensor) -> Tensor:
    """Population standard deviation over the last two axes.

    Constant slices give exactly 0 and pass back a zero gradient.
    """
    _check_tail2(a, "reduce_std_tail2")
    x = a.data
    n = x.shape[-1] * x.shape[-2]
    mean = x.sum(axis=(-2, -1), keepdims=True) / n
    dev = x - mean
    std = np.sqrt((dev * dev).sum(axis=(-2, -1), keepdims=True) / n)
    flat = x.max(axis=(-2, -1), keepdims=True) == x.min(axis=(-2, -1), keepdims=True)
    std = np.where(flat, 0.0, std)
    live = std >= STD_GRAD_FLOOR

    def vjp(g):
        denom = np.where(live, n * std, 1.0)
        return (np.where(live, g * dev / denom, 0.0),)

    return Tensor(std, parents=(a,), vjp=vjp)


def reduce_max_tail2(a: Tensor) -> Tensor:
    """Max over the last two axes; the gradient goes to the first maximum in row-major order."""
    _check_tail2(a, "reduce_max_tail2")
    lead = a.shape[:-2]
    flat = a.data.reshape(lead + (-1,))
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1).reshape(lead + (1, 1))

    def vjp(g):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, idx[..., None], g.reshape(lead + (1,)), axis=-1)
        return (gf.reshape(a.shape),)

    return Tensor(out, parents=(a,), vjp=vjp)


def conv1d_samepad(v: Tensor, kernel: Tensor) -> Tensor:
    """Zero-padded, stride-1, bias-free cross-correlation along the last axis.

    ``v`` is a length-L vector or an ``N x L`` batch of rows; the output has
    the shape of ``v``.
    """
    if kernel.ndim != 1:
        raise ShapeError(f"conv1d kernel must be rank 1, got shape {kernel.shape}")
    k = kernel.shape[0]
    if k % 2 == 0:
        raise ValueError(f"conv1d kernel length must be odd, got {k}")
    if v.ndim not in (1, 2):
        raise ShapeError(f"conv1d input must be rank 1 or 2, got shape {v.shape}")
    L = v.shape[-1]
    if k > 2 * L + 1:
        raise ValueError(f"conv1d kernel length {k} exceeds 2L+1 for L={L}")
    p = k // 2
    pad = [(0, 0)] * (v.ndim - 1) + [(p, p)]
    vp = np.pad(v.data, pad)
    windows = sliding_window_view(vp, k, axis=-1)  # (..., L, k)
    out = windows @ kernel.data

    def vjp(g):
        gk = np.einsum("nl,nlk->k", g.reshape(-1, L), windows.reshape(-1, L, k))
        gp = np.zeros_like(vp)
        for t in range(k):
            gp[..., t : t + L] += g * kernel.data[t]
        return gp[..., p : p + L], gk

    return Tensor(out, parents=(v, kernel), vjp=vjp)


def broadcast_mul(gate: Tensor, t: Tensor) -> Tensor:
    """``out[..., m, i, j] = gate[..., m, 0, 0] * t[..., m, i, j]``."""
    if gate.ndim != t.ndim or gate.shape[:-2] != t.shape[:-2] or gate.shape[-2:] != (1, 1):
        raise ShapeError(f"broadcast_mul: gate {gate.shape} does not lead tensor {t.shape}")
    gv, tv = gate.data, t.data
    return Tensor(
        gv * tv,
        parents=(gate, t),
        vjp=lambda g: ((g * tv).sum(axis=(-2, -1), keepdims=True), g * gv),
    )


def narrow(t: Tensor, axis: int, lo: int, hi: int) -> Tensor:
    """Contiguous slice ``[lo, hi)`` along ``axis``."""
    axis = axis % t.ndim
    idx = [slice(None)] * t.ndim
    idx[axis] = slice(lo, hi)
    idx = tuple(idx)

    def vjp(g):
        full = np.zeros(t.shape)
        full[idx] = g
        return (full,)

    return Tensor(np.ascontiguousarray(t.data[idx]), parents=(t,), vjp=vjp)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def vjp(g):
        return tuple(
            np.ascontiguousarray(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis))
            for i in range(len(tensors))
        )

    return Tensor(out, parents=tuple(tensors), vjp=vjp)


def conv2d(
    x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """Batched 2-D cross-correlation, ``N x C x H x W`` -> ``N x O x Ho x Wo``."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input and weight, got {x.shape}, {weight.shape}")
    N, C, H, W = x.shape
    O, Cw, kh, kw = weight.shape
    if Cw != C:
        raise ShapeError(f"conv2d: input has {C} channels, weight expects {Cw}")
    s, p = int(stride), int(padding)
    Ho = (H + 2 * p - kh) // s + 1
    Wo = (W + 2 * p - kw) // s + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {weight.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    if kh == 1 and kw == 1:
        cols = np.ascontiguousarray(xp[:, :, : s * Ho : s, : s * Wo : s]).reshape(N, C, Ho * Wo)
    else:
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]  # N,C,Ho,Wo,kh,kw
        cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(N, C * kh * kw, Ho * Wo)
    wmat = weight.data.reshape(O, -1)
    out = np.matmul(wmat, cols).reshape(N, O, Ho, Wo)
    if bias is not None:
        out = out + bias.data.reshape(1, O, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        gm = g.reshape(N, O, Ho * Wo)
        gw = np.einsum("nop,nqp->oq", gm, cols).reshape(weight.shape)
        gcols = np.matmul(wmat.T, gm).reshape(N, C, kh, kw, Ho, Wo)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + s * Ho : s, j : j + s * Wo : s] += gcols[:, :, i, j]
        gx = gxp[:, :, p : p + H, p : p + W] if p else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return Tensor(out, parents=parents, vjp=vjp)


def _shuffle_array(a: np.ndarray, s: int) -> np.ndarray:
    *lead, cs, H, W = a.shape
    c = cs // (s * s)
    r = a.reshape(*lead, c, s, s, H, W)
    n = len(lead)
    r = r.transpose(*range(n), n, n + 3, n + 1, n + 4, n + 2)
    return np.ascontiguousarray(r).reshape(*lead, c, H * s, W * s)


def _unshuffle_array(a: np.ndarray, s: int) -> np.ndarray:
    *lead, c, Hs, Ws = a.shape
    H, W = Hs // s, Ws // s
    r = a.reshape(*lead, c, H, s, W, s)
    n = len(lead)
    r = r.transpose(*range(n), n, n + 2, n + 4, n + 1, n + 3)
    return np.ascontiguousarray(r).reshape(*lead, c * s * s, H, W)


def pixel_shuffle(t: Tensor, s: int) -> Tensor:
    """``out[c, h*s+i, w*s+j] = in[c*s*s + i*s + j, h, w]`` (optionally batched)."""
    s = int(s)
    if s < 1 or t.ndim not in (3, 4) or t.shape[-3] % (s * s):
        raise ShapeError(f"pixel_shuffle: leading extent of {t.shape} not divisible by {s}^2")
    return Tensor(_shuffle_array(t.data, s), parents=(t,), vjp=lambda g: (_unshuffle_array(g, s),))


def pixel_unshuffle(t: Tensor, s: int) -> Tensor:
    s = int(s)
    if s < 1 or t.ndim not in (3, 4) or t.shape[-1] % s or t.shape[-2] % s:
        raise ShapeError(f"pixel_unshuffle: spatial extents of {t.shape} not divisible by {s}")
    return Tensor(_unshuffle_array(t.data, s), parents=(t,), vjp=lambda g: (_shuffle_array(g, s),))


def bce_with_logits(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted sum of binary cross-entropy terms, computed stably from logits."""
    z = logits.data
    y = np.broadcast_to(np.asarray(targets, dtype=np.float64), z.shape)
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), z.shape)
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor((w * per).sum(), parents=(logits,), vjp=lambda g: (g.reshape(()) * w * (s - y),))


def l1(pred: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted sum of absolute differences; subgradient 0 at equality."""
    y = np.broadcast_to(np.asarray(targets, dtype=np.float64), pred.shape)
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), pred.shape)
    d = pred.data - y
    return Tensor((w * np.abs(d)).sum(), parents=(pred,), vjp=lambda g: (g.reshape(()) * w * np.sign(d),))
