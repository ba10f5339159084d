"""Oracle comparisons and the combined self-test run."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from ..dysample import grid_resample_bilinear
from ..mcea import POOLS, BranchId, BranchParams, MceaParams, TripleSqueezeParams, mcea_forward
from ..metrics import ap_from_matches, match_predictions
from ..tensor import Tensor
from .ap_oracle import ap_oracle
from .bilinear_oracle import bilinear_oracle
from .gradcases import run_gradcheck_suite
from .mcea_oracle import mcea_oracle

ORACLE_TOL = 1e-12


@dataclass
class OracleReport:
    op: str
    max_abs_error: float
    instances: int
    tol: float = ORACLE_TOL
    exact: bool = False

    @property
    def passed(self) -> bool:
        return self.max_abs_error == 0.0 if self.exact else self.max_abs_error <= self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        bound = "exact" if self.exact else f"tol={self.tol:g}"
        return f"{status} {self.op:<28s} max_abs_err={self.max_abs_error:.3e} {bound} n={self.instances}"


def mcea_instance(rng: np.random.Generator):
    """Random input, parameters and branch/pool selection for one comparison."""
    C, H, W = (int(v) for v in rng.integers(1, 6, size=3))
    lengths = {BranchId.WIDTH: W, BranchId.HEIGHT: H, BranchId.CHANNEL: C}
    enabled = tuple(b for b in BranchId if rng.random() < 0.7) or (BranchId.WIDTH,)
    pools = tuple(p for p in POOLS if rng.random() < 0.8) or ("avg",)
    raw = {}
    for b in BranchId:
        k = int(rng.choice([1, 3, 5]))
        k = min(k, 2 * lengths[b] + 1)
        raw[b] = (*(float(v) for v in rng.normal(size=3)), rng.normal(size=k))
    f = rng.normal(size=(C, H, W)) * rng.uniform(0.1, 3.0)
    return f, raw, enabled, pools


def compare_mcea(rng: np.random.Generator) -> float:
    f, raw, enabled, pools = mcea_instance(rng)
    branches = {
        b: BranchParams(TripleSqueezeParams(Tensor(a), Tensor(be), Tensor(g)), Tensor(k))
        for b, (a, be, g, k) in raw.items()
    }
    ours = mcea_forward(Tensor(f), MceaParams(branches, enabled, pools)).numpy()
    ref = mcea_oracle(
        f.tolist(),
        {b.value: (a, be, g, k.tolist()) for b, (a, be, g, k) in raw.items()},
        tuple(b.value for b in enabled),
        pools,
    )
    return float(np.max(np.abs(ours - np.array(ref))))


def compare_bilinear(rng: np.random.Generator) -> float:
    g = int(rng.integers(1, 4))
    C = g * int(rng.integers(1, 3))
    H, W, Ho, Wo = (int(v) for v in rng.integers(1, 6, size=4))
    x = rng.normal(size=(C, H, W))
    gx = rng.uniform(-1.5, W + 0.5, size=(g, Ho, Wo))
    gy = rng.uniform(-1.5, H + 0.5, size=(g, Ho, Wo))
    # some exact lattice points
    mask = rng.random(gx.shape) < 0.2
    gx[mask] = np.round(gx[mask])
    ours = grid_resample_bilinear(Tensor(x), Tensor(gx), Tensor(gy), g).numpy()
    ref = bilinear_oracle(x.tolist(), gx.tolist(), gy.tolist(), g)
    return float(np.max(np.abs(ours - np.array(ref))))


def _rand_box(rng, near=None):
    if near is not None and rng.random() < 0.7:
        jitter = rng.normal(scale=0.08, size=4)
        x0, y0, x1, y1 = np.asarray(near) + jitter
    else:
        x0, y0 = rng.uniform(0, 0.7, size=2)
        x1, y1 = x0 + rng.uniform(0.05, 0.3), y0 + rng.uniform(0.05, 0.3)
    x0, x1 = sorted((x0, x1))
    y0, y1 = sorted((y0, y1))
    return (float(x0), float(y0), float(max(x1, x0 + 1e-3)), float(max(y1, y0 + 1e-3)))


def ap_instance(rng: np.random.Generator):
    """Single-class instance with at most four boxes on each side."""
    gts = [_rand_box(rng) for _ in range(int(rng.integers(0, 5)))]
    preds = []
    for _ in range(int(rng.integers(0, 5))):
        near = gts[int(rng.integers(0, len(gts)))] if gts else None
        preds.append((float(rng.choice([0.1, 0.3, 0.5, 0.7, 0.9]) + rng.uniform(0, 0.05)), _rand_box(rng, near)))
    thr = float(rng.choice([0.5, 0.75]))
    return preds, gts, thr


def compare_ap(rng: np.random.Generator) -> float:
    preds, gts, thr = ap_instance(rng)
    flags = match_predictions([(0, c, b) for c, b in preds], [(0, b) for b in gts], thr)
    ours = ap_from_matches(flags, [c for c, _ in preds], len(gts))
    ref = ap_oracle(preds, gts, thr)
    if ours is None or ref is None:
        return 0.0 if ours is ref else float("inf")
    return abs(ours - ref)


ORACLES: Dict[str, Tuple[Callable[[np.random.Generator], float], bool]] = {
    "oracle:mcea_forward": (compare_mcea, False),
    "oracle:grid_resample_bilinear": (compare_bilinear, False),
    "oracle:ap_from_matches": (compare_ap, True),
}


def run_oracle_suite(instances: int = 50, seed: int = 0) -> List[OracleReport]:
    reports = []
    for name, (fn, exact) in ORACLES.items():
        worst = 0.0
        for i in range(instances):
            rng = np.random.default_rng([seed, zlib.crc32(name.encode()), i])
            worst = max(worst, fn(rng))
        reports.append(OracleReport(name, worst, instances, exact=exact))
    return reports


def run_selftest(instances: int = 50, seed: int = 0, names: Optional[List[str]] = None) -> list:
    """Every gradient check followed by every oracle comparison."""
    return run_gradcheck_suite(instances, seed, names) + run_oracle_suite(instances, seed)
