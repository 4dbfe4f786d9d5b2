"""A small reverse-mode autodiff core.

Every op builds a new :class:`Tensor` whose ``_backward`` maps the output
gradient to a tuple of parent gradients (``None`` where not needed).
"""
import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or infinite values."""

    def __init__(self, op):
        super().__init__(f"non-finite values produced by {op}")
        self.op = op


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, value, requires_grad=False, parents=(), backward=None, op="leaf"):
        self.value = np.asarray(value)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate gradients of this tensor into every reachable leaf."""
        if grad is None:
            if self.value.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.value)
        order, seen = [], set()
        stack = [(self, False)]
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
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.value.shape:
                    raise ValueError(f"{node.op}: gradient shape {pg.shape} != {p.value.shape}")
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else prev + pg


def parameter(value):
    return Tensor(value, requires_grad=True)


def constant(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def make(value, parents, backward, op):
    """Wrap an op result, checking it is finite."""
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(op)
    needs = any(p.requires_grad for p in parents)
    return Tensor(value, needs, parents if needs else (), backward if needs else None, op)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    a, b = constant(a), constant(b)
    return make(a.value + b.value, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = constant(a), constant(b)
    return make(a.value - b.value, (a, b),
                lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b):
    a, b = constant(a), constant(b)
    return make(a.value * b.value, (a, b),
                lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)), "mul")


def scale(a, c):
    return make(a.value * c, (a,), lambda g: (g * c,), "scale")


def absolute(a):
    return make(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),), "abs")


def mean(a):
    n = a.value.size
    return make(np.asarray(a.value.mean()), (a,), lambda g: (np.full(a.shape, g / n, dtype=a.value.dtype),), "mean")


def concat(tensors, axis=0):
    tensors = [constant(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return make(np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors), backward, "concat")


def take(a, idx):
    """Rows ``a[idx]`` along the first axis."""
    idx = np.asarray(idx)

    def backward(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return (out,)

    return make(a.value[idx], (a,), backward, "take")


def rows(a, start, stop):
    """Contiguous slice ``a[start:stop]`` along the first axis."""

    def backward(g):
        out = np.zeros_like(a.value)
        out[start:stop] = g
        return (out,)

    return make(a.value[start:stop], (a,), backward, "rows")
