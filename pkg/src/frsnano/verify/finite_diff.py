"""Central finite differences and the gradient-check report built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

DEFAULT_EPS = 1e-6
DEFAULT_TOL = 1e-4


def relative_error(a, b):
    """``|a - b| / max(1e-8, |a| + |b|)``, elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))


def finite_diff(f: Callable[[np.ndarray], float], x, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``, one element at a time.

    ``f`` may also return an array whose sum is the scalar of interest. The
    two evaluations are then differenced term by term before an exact sum,
    so terms that do not depend on the perturbed element cancel exactly
    instead of contributing rounding noise.
    """
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = np.asarray(f(x), dtype=np.float64)
        flat[i] = orig - eps
        lo = np.asarray(f(x), dtype=np.float64)
        flat[i] = orig
        if not (np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))):
            raise ValueError(f"non-finite function value near element {i}")
        gflat[i] = math.fsum((hi - lo).reshape(-1).tolist()) / (2.0 * eps)
    return out


@dataclass
class GradCheckReport:
    op: str
    max_rel_error: float
    worst_index: Optional[Tuple[int, ...]]
    eps: float
    tol: float
    instances: int = 1

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.op:<28s} max_rel_err={self.max_rel_error:.3e} "
            f"worst={self.worst_index} eps={self.eps:g} tol={self.tol:g} n={self.instances}"
        )

    def merge(self, other: "GradCheckReport") -> "GradCheckReport":
        worst = self if self.max_rel_error >= other.max_rel_error else other
        return GradCheckReport(
            self.op, worst.max_rel_error, worst.worst_index, self.eps, self.tol,
            self.instances + other.instances,
        )
