"""Dense tensor with a tape restricted to the fixed railwave layer set."""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
import numpy.typing as npt

# Runtime finiteness checks after every op; tests switch this on.
CHECK_FINITE = False


class Tensor:
    """Row-major float array with an optional gradient of identical shape.

    Ops in :mod:`railwave.nn.layers` return tensors that remember their
    parents and a closure propagating the upstream gradient to them.
    ``backward()`` walks that record in reverse topological order and
    accumulates ``grad`` on every tensor reached, leaf inputs included.
    """

    __slots__ = ("data", "grad", "name", "_parents", "_backward")

    def __init__(
        self,
        data: npt.ArrayLike,
        name: str = "",
        dtype: npt.DTypeLike | None = None,
        _parents: Sequence["Tensor"] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ) -> None:
        arr = np.array(data, dtype=dtype if dtype is not None else np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents = tuple(_parents)
        self._backward = _backward
        if CHECK_FINITE and not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite values produced in {name or 'tensor'}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.data.dtype})"

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        g = np.asarray(g, dtype=np.float64)
        if g.shape != self.data.shape:
            g = g.reshape(self.data.shape)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, name=self.name, dtype=self.data.dtype)

    def backward(self, grad: npt.ArrayLike | None = None) -> None:
        """Backpropagate from this tensor; default seed is ones (d self / d self)."""
        seed = np.ones(self.shape) if grad is None else np.asarray(grad, dtype=np.float64)
        order = _topological(self)
        self.accumulate(seed)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _topological(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def as_tensor(x: Tensor | npt.ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
