"""Dense double-precision tensor with a reverse-mode differentiation graph."""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np

VjpFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

MAX_RANK = 4


class ShapeError(ValueError):
    """Raised when operand shapes violate an operator's contract."""


class Tensor:
    """Immutable rank-1..4 float64 array that remembers how it was produced.

    Leaves are created directly (``Tensor(data, requires_grad=True)``);
    interior nodes are created by the functions in :mod:`frsnano.ops`, which
    attach the parent nodes and a vector-Jacobian product rule.
    """

    __slots__ = ("data", "parents", "vjp", "requires_grad", "grad", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Tuple["Tensor", ...] = (),
        vjp: Optional[VjpFn] = None,
        name: Optional[str] = None,
    ):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not 1 <= arr.ndim <= MAX_RANK:
            raise ShapeError(f"tensor rank must be 1..{MAX_RANK}, got shape {arr.shape}")
        arr.setflags(write=False)
        self.data = arr
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = bool(requires_grad or any(p.requires_grad for p in parents))
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; the real definitions live in frsnano.ops
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)


def _topo_order(root: Tensor) -> list:
    # iterative DFS; parents visited in declaration order so the result is fixed
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node.parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Populate ``.grad`` on every reachable leaf that requires a gradient.

    Each call starts from a fresh accumulation, so calling it twice on the
    same graph yields the same gradients rather than doubled ones.
    """
    if root.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    order = _topo_order(root)
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node.is_leaf:
            if node.requires_grad:
                node.grad = g if g is not None else np.zeros_like(node.data)
            continue
        if g is None:
            continue
        parent_grads = node.vjp(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise ShapeError(
                    f"vjp produced gradient of shape {pg.shape} for parent of shape {parent.shape}"
                )
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def grad(root: Tensor, leaves: Iterable[Tensor]) -> list:
    """Gradients of ``root`` with respect to ``leaves``; zeros for unreachable leaves."""
    leaves = list(leaves)
    for leaf in leaves:
        leaf.grad = None
    backward(root)
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]
