"""Reverse-mode autodiff tape over dense float64 numpy arrays.

A ``Tensor`` wraps an ndarray and remembers the op that produced it;
``backward()`` materialises the graph in topological order and visits every
node exactly once in reverse. All arithmetic is 64-bit so that central
finite differences can verify gradients tightly.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class NumericError(ArithmeticError):
    """A forward op produced NaN/Inf, which this engine treats as an error state."""


class ShapeError(ValueError):
    """Input shapes do not conform to an op's shape rule."""


def _as_f64(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """One node of the computation graph.

    ``_parents`` holds the input tensors, ``_vjp`` maps the upstream gradient
    to one gradient array per parent (aligned with ``_parents``).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        vjp: Callable[[np.ndarray], Sequence[np.ndarray]] | None = None,
        op: str = "",
    ):
        self.data = _as_f64(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._vjp = vjp if self.requires_grad else None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}{tag})"

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        order = topological_order(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            grads = node._vjp(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if g.shape != parent.data.shape:
                    raise ShapeError(
                        f"vjp of op '{node.op}' produced gradient shape {g.shape} "
                        f"for parent of shape {parent.data.shape}"
                    )
                if parent.grad is None:
                    parent.grad = g.copy() if g.base is not None else g
                else:
                    parent.grad = parent.grad + g


# The materialised graph is just the topological ordering of tensors.
Graph = list


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, every node after all of its parents."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


class Parameter(Tensor):
    """A named trainable tensor with Adam moment slots."""

    __slots__ = ("name", "m", "v")

    def __init__(self, name: str, value):
        super().__init__(value, requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.shape})"


def check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"op '{op}' produced non-finite values")
    return arr
