"""Reverse-mode tape: tensors record the operators that produced them.

Each operator attaches a backward closure to its output; ``backward``
replays the recorded applications in exact reverse order (topological
order of the DAG) and accumulates gradients on every tensor that
requires them.  First-order gradients only.
"""

import contextlib

import numpy as np

_no_grad_depth = 0


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference mode)."""
    global _no_grad_depth
    _no_grad_depth += 1
    try:
        yield
    finally:
        _no_grad_depth -= 1


def grad_enabled() -> bool:
    return _no_grad_depth == 0


class Tensor:
    """n-d array plus the bookkeeping reverse mode needs."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, op=None, parents=()):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def accum_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, op={self.op!r}{flag})"


class Parameter(Tensor):
    """Named model weight; ``trainable`` gates both gradients and updates."""

    __slots__ = ("name",)

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(np.asarray(data), requires_grad=trainable)
        self.name = name

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    @trainable.setter
    def trainable(self, flag: bool):
        self.requires_grad = bool(flag)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape}, trainable={self.trainable})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def toposort(root: Tensor):
    """Tensors in dependency order (inputs first, ``root`` last)."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Run reverse mode from a scalar loss; gradients land on ``.grad``."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss._parents:
        raise RuntimeError("backward called before forward: loss is not an operator output")
    order = toposort(loss)
    loss.accum_grad(np.ones_like(loss.data))
    for t in reversed(order):
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


def collect_grads(params) -> dict:
    """Gradients of trainable parameters by name; frozen ones excluded."""
    out = {}
    for p in params:
        if p.trainable and p.grad is not None:
            out[p.name] = p.grad
    return out
