"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps an ndarray plus an optional gradient and a closure that
knows how to push an upstream gradient to the tensors it was built from.
``backward()`` walks the graph once in reverse topological order.

Contracts that the rest of the package leans on:

* Gradients accumulate additively across uses of a tensor. Nothing here ever
  resets a ``.grad``; callers zero them between steps.
* There is no silent broadcasting. Binary ops demand identical shapes, with
  one exception: adding a rank-1 vector to the last axis (bias add).
* Double precision is the default; float32 arrays are kept as float32.
* Ops built inside a ``no_grad()`` block record no graph.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def _as_array(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        if data.dtype == np.float32 or data.dtype == np.float64:
            return data
        return data.astype(np.float64)
    return np.asarray(data, dtype=np.float64)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # ---- bookkeeping ----

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Same values, cut out of the graph. Shares the underlying array."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad: np.ndarray | None = None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(
                    f"backward() without an explicit seed needs a scalar, got shape {self.data.shape}"
                )
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ShapeError(f"seed gradient shape {grad.shape} != tensor shape {self.data.shape}")

        # iterative topological sort; recursion depth would scale with graph size
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                if g.shape != parent.data.shape:
                    raise ShapeError(
                        f"gradient shape {g.shape} does not match parent shape {parent.data.shape}"
                    )
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g
            if node is not self:
                node.grad = None  # interior grads are scratch; leaves keep theirs

    # ---- graph construction helper ----

    @staticmethod
    def _make(out_data: np.ndarray, parents: tuple["Tensor", ...], backward) -> "Tensor":
        req = _grad_enabled and any(p.requires_grad for p in parents)
        out = Tensor(out_data, requires_grad=req)
        if req:
            out._parents = parents
            out._backward = backward
        return out

    # ---- arithmetic ----

    def __add__(self, other):
        if not isinstance(other, Tensor):
            s = float(other)
            return Tensor._make(self.data + s, (self,), lambda g: (g,))
        if self.data.shape == other.data.shape:
            return Tensor._make(self.data + other.data, (self, other), lambda g: (g, g))
        if other.data.ndim == 1 and self.data.ndim >= 1 and self.data.shape[-1] == other.data.shape[0]:
            # bias add along the last axis; vector grad sums over leading axes
            lead = tuple(range(self.data.ndim - 1))
            return Tensor._make(
                self.data + other.data,
                (self, other),
                lambda g: (g, g.sum(axis=lead) if lead else g),
            )
        raise ShapeError(f"add shapes {self.data.shape} and {other.data.shape} do not match")

    def __radd__(self, other):
        return self.__add__(other)

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        if not isinstance(other, Tensor):
            return self + (-float(other))
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + float(other)

    def __mul__(self, other):
        if not isinstance(other, Tensor):
            s = float(other)
            return Tensor._make(self.data * s, (self,), lambda g: (g * s,))
        if self.data.shape != other.data.shape:
            raise ShapeError(f"mul shapes {self.data.shape} and {other.data.shape} do not match")
        a, b = self, other
        return Tensor._make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported; multiply by a reciprocal op instead")
        return self * (1.0 / float(other))

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(other)
        a, b = self, other
        if a.data.ndim == 2 and b.data.ndim == 2:
            if a.data.shape[1] != b.data.shape[0]:
                raise ShapeError(f"matmul inner dims {a.data.shape} @ {b.data.shape}")
            return Tensor._make(
                a.data @ b.data,
                (a, b),
                lambda g: (g @ b.data.T, a.data.T @ g),
            )
        if a.data.ndim == b.data.ndim and a.data.ndim > 2:
            if a.data.shape[:-2] != b.data.shape[:-2] or a.data.shape[-1] != b.data.shape[-2]:
                raise ShapeError(f"batched matmul shapes {a.data.shape} @ {b.data.shape}")
            return Tensor._make(
                np.matmul(a.data, b.data),
                (a, b),
                lambda g: (
                    np.matmul(g, b.data.swapaxes(-1, -2)),
                    np.matmul(a.data.swapaxes(-1, -2), g),
                ),
            )
        raise ShapeError(f"matmul ranks {a.data.ndim} and {b.data.ndim} are not supported")

    # ---- shape moves ----

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        return Tensor._make(
            np.ascontiguousarray(self.data.transpose(axes)),
            (self,),
            lambda g: (g.transpose(inv),),
        )

    def __getitem__(self, key):
        src_shape = self.data.shape
        out = self.data[key]
        if out.base is not None:
            out = out.copy()

        def back(g):
            full = np.zeros(src_shape, dtype=g.dtype)
            full[key] = g
            return (full,)

        return Tensor._make(out, (self,), back)

    # ---- reductions ----

    def sum(self):
        return Tensor._make(
            np.asarray(self.data.sum(), dtype=self.data.dtype),
            (self,),
            lambda g: (np.broadcast_to(g, self.data.shape).astype(self.data.dtype, copy=True),),
        )

    def mean(self):
        n = self.data.size
        return self.sum() / n


def param(data, rng: np.random.Generator | None = None, std: float | None = None, shape=None) -> Tensor:
    """Trainable leaf. Either wrap ``data`` directly or draw N(0, std) of ``shape``."""
    if data is None:
        data = rng.normal(0.0, std, size=shape)
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along an existing axis."""
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        return tuple(
            np.ascontiguousarray(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis))
            for i in range(len(sizes))
        )

    return Tensor._make(np.concatenate(datas, axis=axis), tuple(tensors), back)
