"""Registry of differentiable operators checked against central differences.

Each case builds a small random instance from a seeded generator and returns
``(fn, inputs)``: ``fn`` maps input tensors to an output tensor of any shape,
and ``inputs`` are the arrays differentiated against. The output is reduced to
a scalar by a fixed random projection so every output element contributes.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .. import ops
from ..detector.loss import detection_loss
from ..dysample import DysampleParams, Mode, dysample_forward, gen_offsets, grid_resample_bilinear, sampling_grid
from ..mcea import (
    BranchId,
    BranchParams,
    MceaParams,
    TripleSqueezeParams,
    branch_forward,
    excite,
    mcea_forward,
    triple_squeeze,
)
from ..tensor import Tensor, backward
from .finite_diff import DEFAULT_EPS, DEFAULT_TOL, GradCheckReport, finite_diff, relative_error

Builder = Callable[[np.random.Generator], Tuple[Callable[..., Tensor], List[np.ndarray]]]


@dataclass(frozen=True)
class GradCase:
    name: str
    build: Builder


REGISTRY: Dict[str, GradCase] = {}


def register(name: str):
    def deco(fn: Builder) -> Builder:
        if name in REGISTRY:
            raise ValueError(f"duplicate grad case {name!r}")
        REGISTRY[name] = GradCase(name, fn)
        return fn

    return deco


def _shape(rng, rank, lo=1, hi=4):
    return tuple(int(v) for v in rng.integers(lo, hi + 1, size=rank))


# -- tensor-core ------------------------------------------------------------


@register("add")
def _add(rng):
    s = _shape(rng, int(rng.integers(1, 5)))
    return ops.add, [rng.normal(size=s), rng.normal(size=s)]


@register("add_scalar")
def _add_scalar(rng):
    return ops.add, [rng.normal(size=_shape(rng, 3)), rng.normal(size=1)]


@register("sub")
def _sub(rng):
    s = _shape(rng, int(rng.integers(1, 5)))
    return ops.sub, [rng.normal(size=s), rng.normal(size=s)]


@register("mul")
def _mul(rng):
    s = _shape(rng, int(rng.integers(1, 5)))
    return ops.mul, [rng.normal(size=s), rng.normal(size=s)]


@register("mul_scalar")
def _mul_scalar(rng):
    return ops.mul, [rng.normal(size=_shape(rng, 2)), rng.normal(size=1)]


@register("scale")
def _scale(rng):
    c = float(rng.normal())
    return (lambda a: ops.scale(a, c)), [rng.normal(size=_shape(rng, 3))]


@register("neg")
def _neg(rng):
    return (lambda a: -a), [rng.normal(size=_shape(rng, 2))]


@register("sigmoid")
def _sigmoid(rng):
    return ops.sigmoid, [rng.normal(scale=3.0, size=_shape(rng, 3))]


@register("sqrt")
def _sqrt(rng):
    return ops.sqrt, [rng.uniform(0.2, 3.0, size=_shape(rng, 2))]


@register("silu")
def _silu(rng):
    return ops.silu, [rng.normal(scale=2.0, size=_shape(rng, 4, hi=3))]


@register("total")
def _total(rng):
    return ops.total, [rng.normal(size=_shape(rng, 3))]


@register("reshape")
def _reshape(rng):
    a, b, c = _shape(rng, 3)
    return (lambda x: ops.reshape(x, (c, a * b))), [rng.normal(size=(a, b, c))]


@register("permute")
def _permute(rng):
    rank = int(rng.integers(2, 5))
    axes = tuple(int(v) for v in rng.permutation(rank))
    return (lambda x: ops.permute(x, axes)), [rng.normal(size=_shape(rng, rank))]


@register("reduce_mean_tail2")
def _mean(rng):
    return ops.reduce_mean_tail2, [rng.normal(size=_shape(rng, int(rng.integers(3, 5))))]


@register("reduce_std_tail2")
def _std(rng):
    s = _shape(rng, int(rng.integers(3, 5)), lo=2)
    return ops.reduce_std_tail2, [rng.normal(size=s)]


@register("reduce_max_tail2")
def _max(rng):
    return ops.reduce_max_tail2, [rng.normal(size=_shape(rng, int(rng.integers(3, 5))))]


@register("conv1d_samepad")
def _conv1d(rng):
    L = int(rng.integers(2, 9))
    k = int(rng.choice([1, 3, 5]))
    lead = () if rng.random() < 0.5 else (int(rng.integers(1, 4)),)
    return ops.conv1d_samepad, [rng.normal(size=lead + (L,)), rng.normal(size=k)]


@register("broadcast_mul")
def _bmul(rng):
    s = _shape(rng, int(rng.integers(3, 5)))
    return ops.broadcast_mul, [rng.normal(size=s[:-2] + (1, 1)), rng.normal(size=s)]


@register("narrow")
def _narrow(rng):
    s = _shape(rng, 4, lo=2)
    axis = int(rng.integers(0, 4))
    lo = int(rng.integers(0, s[axis] - 1))
    hi = int(rng.integers(lo + 1, s[axis] + 1))
    return (lambda x: ops.narrow(x, axis, lo, hi)), [rng.normal(size=s)]


@register("concat")
def _concat(rng):
    n, h, w = _shape(rng, 3)
    c1, c2 = _shape(rng, 2)
    return (lambda a, b: ops.concat([a, b], axis=1)), [rng.normal(size=(n, c1, h, w)), rng.normal(size=(n, c2, h, w))]


@register("conv2d")
def _conv2d(rng):
    k = int(rng.choice([1, 3]))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, k // 2 + 1))
    N, C, O = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
    H = int(rng.integers(max(k - 2 * pad, 1), 6))
    W = int(rng.integers(max(k - 2 * pad, 1), 6))
    fn = lambda x, wt, b: ops.conv2d(x, wt, b, stride=stride, padding=pad)  # noqa: E731
    return fn, [rng.normal(size=(N, C, H, W)), rng.normal(size=(O, C, k, k)), rng.normal(size=O)]


@register("pixel_shuffle")
def _ps(rng):
    s = int(rng.integers(1, 3))
    c, h, w = _shape(rng, 3, hi=3)
    return (lambda x: ops.pixel_shuffle(x, s)), [rng.normal(size=(c * s * s, h, w))]


@register("pixel_unshuffle")
def _pu(rng):
    s = int(rng.integers(1, 3))
    n, c, h, w = _shape(rng, 4, hi=2)
    return (lambda x: ops.pixel_unshuffle(x, s)), [rng.normal(size=(n, c, h * s, w * s))]


@register("bce_with_logits")
def _bce(rng):
    s = _shape(rng, 3)
    targets = (rng.random(s) < 0.5).astype(float)
    weights = rng.uniform(0.0, 2.0, size=s)
    return (lambda z: ops.bce_with_logits(z, targets, weights)), [rng.normal(scale=2.0, size=s)]


@register("l1")
def _l1(rng):
    s = _shape(rng, 3)
    targets = rng.normal(size=s)
    weights = rng.uniform(0.0, 2.0, size=s)
    # keep predictions away from the kink at pred == target
    pred = targets + rng.choice([-1.0, 1.0], size=s) * rng.uniform(0.05, 1.0, size=s)
    return (lambda p: ops.l1(p, targets, weights)), [pred]


# -- attention --------------------------------------------------------------


def _squeeze_from(a, b, g):
    return TripleSqueezeParams(a, b, g)


@register("triple_squeeze")
def _tsq(rng):
    s = _shape(rng, int(rng.integers(3, 5)), lo=2)
    fn = lambda f, a, b, g: triple_squeeze(f, _squeeze_from(a, b, g))  # noqa: E731
    return fn, [rng.normal(size=s)] + [rng.normal(size=1) for _ in range(3)]


@register("excite")
def _excite(rng):
    L = int(rng.integers(2, 8))
    k = int(rng.choice([1, 3, 5]))
    return excite, [rng.normal(size=(L, 1, 1)), rng.normal(size=k)]


@register("branch_forward")
def _branch(rng):
    b = list(BranchId)[int(rng.integers(0, 3))]
    s = _shape(rng, 3, lo=2)
    k = int(rng.choice([1, 3]))

    def fn(f, a, be, g, kern):
        return branch_forward(f, b, BranchParams(_squeeze_from(a, be, g), kern))

    return fn, [rng.normal(size=s)] + [rng.normal(size=1) for _ in range(3)] + [rng.normal(size=k)]


@register("mcea_forward")
def _mcea(rng):
    s = _shape(rng, int(rng.integers(3, 5)), lo=2, hi=3)
    enabled = [b for b in BranchId if rng.random() < 0.7] or [BranchId.CHANNEL]
    kernels = [int(rng.choice([1, 3])) for _ in BranchId]

    def fn(f, *flat):
        branches = {}
        for i, b in enumerate(BranchId):
            a, be, g, kern = flat[4 * i : 4 * i + 4]
            branches[b] = BranchParams(_squeeze_from(a, be, g), kern)
        return mcea_forward(f, MceaParams(branches, tuple(enabled)))

    inputs = [rng.normal(size=s)]
    for k in kernels:
        inputs += [rng.normal(size=1) for _ in range(3)] + [rng.normal(size=k)]
    return fn, inputs


# -- upsampler --------------------------------------------------------------


KINK_MARGIN = 1e-4


def _away_from_kinks(gx, gy, H, W, margin=KINK_MARGIN) -> bool:
    """True when no sampling position sits on a cell edge or clamp bound.

    Bilinear sampling is only piecewise smooth in the position, so central
    differences straddling an integer coordinate or a clamp bound measure a
    one-sided slope mix rather than the derivative.
    """
    for pos, n in ((np.asarray(gx), W), (np.asarray(gy), H)):
        near_int = np.abs(pos - np.round(pos)) < margin
        near_clamp = (np.abs(pos + 0.5) < margin) | (np.abs(pos - (n - 0.5)) < margin)
        if np.any(near_int | near_clamp):
            return False
    return True


def _dys_case(rng, mode: Mode, full: bool):
    for _ in range(100):
        fn, inputs, kink_free = _dys_draw(rng, mode, full)
        if kink_free:
            return fn, inputs
    raise RuntimeError("could not draw a kink-free upsampler instance")


def _dys_draw(rng, mode: Mode, full: bool):
    g = int(rng.choice([1, 2]))
    C = g * int(rng.integers(1, 3))
    s = int(rng.integers(1, 3))
    H, W = _shape(rng, 2, hi=3)
    out = 2 * g * s * s
    batched = rng.random() < 0.5
    xshape = ((1,) if batched else ()) + (C, H, W)
    inputs = [rng.normal(size=xshape), rng.normal(scale=0.5, size=(out, C, 1, 1)), rng.normal(scale=0.5, size=out)]
    if mode is Mode.DYNAMIC:
        inputs += [rng.normal(size=(out, C, 1, 1)), rng.normal(size=out)]

    def params(ow, ob, sw=None, sb=None):
        return DysampleParams(C, mode, s, g, offset_weight=ow, offset_bias=ob, scope_weight=sw, scope_bias=sb)

    def fn(x, *weights):
        p = params(*weights)
        return dysample_forward(x, p) if full else gen_offsets(x, p)

    if not full:
        return fn, inputs, True
    ts = [Tensor(a) for a in inputs]
    gx, gy = sampling_grid(gen_offsets(ts[0], params(*ts[1:])), H, W, params(*ts[1:]))
    return fn, inputs, _away_from_kinks(gx.data, gy.data, H, W)


@register("gen_offsets_static")
def _go_static(rng):
    return _dys_case(rng, Mode.STATIC, full=False)


@register("gen_offsets_dynamic")
def _go_dynamic(rng):
    return _dys_case(rng, Mode.DYNAMIC, full=False)


@register("grid_resample_bilinear")
def _grid(rng):
    g = int(rng.choice([1, 2]))
    C = g * int(rng.integers(1, 3))
    H, W = _shape(rng, 2, hi=4)
    Ho, Wo = _shape(rng, 2, hi=4)
    # include out-of-range positions to exercise clamping
    while True:
        gx = rng.uniform(-1.0, W, size=(g, Ho, Wo))
        gy = rng.uniform(-1.0, H, size=(g, Ho, Wo))
        if _away_from_kinks(gx, gy, H, W):
            break
    return (lambda x, a, b: grid_resample_bilinear(x, a, b, g)), [rng.normal(size=(C, H, W)), gx, gy]


@register("dysample_forward_static")
def _dys_static(rng):
    return _dys_case(rng, Mode.STATIC, full=True)


@register("dysample_forward_dynamic")
def _dys_dynamic(rng):
    return _dys_case(rng, Mode.DYNAMIC, full=True)


# -- detector loss ----------------------------------------------------------


@register("detection_loss")
def _loss(rng):
    N, S, K = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
    gts = []
    for _ in range(N):
        boxes = []
        for _ in range(int(rng.integers(0, 3))):
            cx, cy = rng.uniform(0.05, 0.95, size=2)
            w, h = rng.uniform(0.05, 0.9, size=2)
            boxes.append((int(rng.integers(0, K)), float(cx), float(cy), float(w), float(h)))
        gts.append(boxes)
    return (lambda raw: detection_loss(raw, gts)), [rng.normal(size=(N, 5 + K, S, S))]


# -- driver -----------------------------------------------------------------


def check_instance(
    name: str,
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    rng: np.random.Generator,
    eps: float = DEFAULT_EPS,
    tol: float = DEFAULT_TOL,
) -> GradCheckReport:
    """Compare backprop with central differences for one instance."""
    probe = fn(*[Tensor(a) for a in inputs])
    weights = rng.normal(size=probe.shape)

    def scalar(*ts):
        return ops.total(ops.mul(fn(*ts), weights))

    leaves = [Tensor(a, requires_grad=True) for a in inputs]
    backward(scalar(*leaves))
    worst, worst_at = 0.0, None
    for k, (leaf, a) in enumerate(zip(leaves, inputs)):
        analytic = leaf.grad if leaf.grad is not None else np.zeros(a.shape)

        def f(x, k=k):
            # weighted outputs, summed inside finite_diff after differencing
            args = [Tensor(x if i == k else b) for i, b in enumerate(inputs)]
            return fn(*args).data * weights

        numeric = finite_diff(f, a, eps)
        err = relative_error(analytic, numeric)
        if err.size and err.max() > worst:
            worst = float(err.max())
            worst_at = (k,) + tuple(int(i) for i in np.unravel_index(err.argmax(), err.shape))
    return GradCheckReport(name, worst, worst_at, eps, tol)


def check_case(
    case: GradCase, instances: int = 50, seed: int = 0, eps: float = DEFAULT_EPS, tol: float = DEFAULT_TOL
) -> GradCheckReport:
    report: Optional[GradCheckReport] = None
    for i in range(instances):
        rng = np.random.default_rng([seed, zlib.crc32(case.name.encode()), i])
        fn, inputs = case.build(rng)
        r = check_instance(case.name, fn, [np.asarray(a, dtype=np.float64) for a in inputs], rng, eps, tol)
        report = r if report is None else report.merge(r)
    return report


def run_gradcheck_suite(
    instances: int = 50, seed: int = 0, names: Optional[Sequence[str]] = None, tol: float = DEFAULT_TOL
) -> List[GradCheckReport]:
    names = list(REGISTRY) if names is None else list(names)
    return [check_case(REGISTRY[n], instances, seed, tol=tol) for n in names]
