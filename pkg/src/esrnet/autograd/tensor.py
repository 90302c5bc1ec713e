"""Reverse-mode autodiff tensors.

Every operation records its input tensors and an adjoint closure on the
output; the resulting graph is the tape. ``backward`` walks it once in
reverse topological order and accumulates gradients by summation, so a
tensor consumed by several operations receives the sum of all incoming
adjoints.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when an operation receives incompatibly shaped arguments."""


class NumericFault(FloatingPointError):
    """Raised when NaN/Inf is detected where finite values are required."""


class Tensor:
    """A numpy array plus gradient storage and tape links."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_adjoint")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=_as_float_dtype(data))
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._adjoint = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def accumulate_grad(self, incoming: np.ndarray) -> None:
        if incoming.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {incoming.shape} does not match value shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = incoming.astype(self.data.dtype, copy=True)
        else:
            self.grad += incoming

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def has_fault(self) -> bool:
        """True if value or gradient contains NaN/Inf."""
        if not np.all(np.isfinite(self.data)):
            return True
        return self.grad is not None and not np.all(np.isfinite(self.grad))

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def _as_float_dtype(data):
    dt = np.asarray(data).dtype
    if dt in (np.float32, np.float64):
        return dt
    return np.float64 if dt == np.longdouble else np.float32


def make_node(data, parents, adjoint) -> Tensor:
    """Create an interior tape node; grads flow iff some parent wants them."""
    out = Tensor(np.asarray(data))
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._adjoint = adjoint
    return out


def _topo_order(root: Tensor):
    """Iterative post-order DFS; recursion-free for deep stacks."""
    order, seen, stack = [], set(), [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Propagate adjoints from a scalar loss through the recorded tape."""
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward on a tensor with no recorded parents and requires_grad=False")
    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(_topo_order(loss)):
        if node._adjoint is not None and node.grad is not None:
            node._adjoint(node.grad)


class Parameter:
    """Trainable tensor with an SGD momentum buffer and a freeze switch.

    lr_multiplier scales the step (1.0 normal, 0.2 reduced-rate, 0.0 frozen);
    the invariant lr_multiplier == 0 <=> trainable is False is enforced here.
    """

    __slots__ = ("tensor", "momentum_buffer", "_lr_multiplier", "name")

    def __init__(self, value: np.ndarray, name: str = ""):
        self.tensor = Tensor(value, requires_grad=True)
        self.tensor.zero_grad()
        self.momentum_buffer = np.zeros_like(self.tensor.data)
        self._lr_multiplier = 1.0
        self.name = name

    @property
    def value(self) -> Tensor:
        return self.tensor

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray:
        return self.tensor.grad

    @property
    def lr_multiplier(self) -> float:
        return self._lr_multiplier

    @lr_multiplier.setter
    def lr_multiplier(self, m: float) -> None:
        if m < 0:
            raise ValueError(f"lr_multiplier must be >= 0, got {m}")
        self._lr_multiplier = float(m)

    @property
    def trainable(self) -> bool:
        return self._lr_multiplier != 0.0

    def freeze(self) -> None:
        self._lr_multiplier = 0.0

    def zero_grad(self) -> None:
        self.tensor.zero_grad()

    def __repr__(self):
        return f"Parameter({self.name or 'unnamed'}, shape={self.tensor.shape}, lr_mult={self._lr_multiplier})"
