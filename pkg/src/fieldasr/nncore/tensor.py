"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array. Operations on tracked tensors (requires_grad
leaves or anything derived from them) record parent links and a backward
closure; Tensor.backward() runs one reverse topological sweep and accumulates
gradients into .grad. Recording is skipped entirely inside no_grad() blocks
and for untracked inputs, so inference runs at plain-numpy speed.

A recorded graph is confined to the thread that built it.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from ..errors import NumericError, ShapeError

_LOCAL = threading.local()

# When True, every op asserts its output is finite. Slow; meant for tests.
debug_checks = False


def _grad_enabled():
    return getattr(_LOCAL, "grad_enabled", True)


@contextmanager
def no_grad():
    prev = _grad_enabled()
    _LOCAL.grad_enabled = False
    try:
        yield
    finally:
        _LOCAL.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_swept")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._swept = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def backward(self):
        """Backpropagate from a scalar root through the recorded graph.

        The graph is consumed: a second call without re-running the forward
        computation raises.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward root must be scalar, got shape {self.shape}")
        if self._swept:
            raise RuntimeError("backward already called on this graph; re-run forward")

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited and parent._backward is not None:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g
            node._parents = ()
            node._backward = None
            node._swept = True


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward, op):
    if debug_checks and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by op '{op}'")
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def custom(data, parents, backward, op_name):
    """Register an externally computed op on the tape.

    backward receives the upstream gradient and must return one gradient
    per parent (or None).
    """
    return _result(data, tuple(parents), backward, op_name)


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(data, (a, b), backward, "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(data, (a, b), backward, "mul")


def matmul(a, b):
    """Matrix product; stacked (batched) leading dims follow numpy rules,
    but batch dims must match exactly (no batch broadcasting)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: need 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        return g @ b.data.swapaxes(-1, -2), a.data.swapaxes(-1, -2) @ g

    return _result(data, (a, b), backward, "matmul")


def dot(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot: need equal 1-D operands, got {a.shape} and {b.shape}")
    data = a.data @ b.data

    def backward(g):
        return g * b.data, g * a.data

    return _result(data, (a, b), backward, "dot")


def tanh(x):
    x = _as_tensor(x)
    data = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - data * data),)

    return _result(data, (x,), backward, "tanh")


def sigmoid(x):
    x = _as_tensor(x)
    # stable in both tails
    data = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(x.data))),
                    np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))

    def backward(g):
        return (g * data * (1.0 - data),)

    return _result(data, (x,), backward, "sigmoid")


def softmax(x, axis=-1):
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        return ((g - inner) * data,)

    return _result(data, (x,), backward, "softmax")


def log_softmax(x, axis=-1):
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse

    def backward(g):
        return (g - np.exp(data) * g.sum(axis=axis, keepdims=True),)

    return _result(data, (x,), backward, "log_softmax")


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return _result(data, tuple(tensors), backward, "concat")


def reshape(x, shape):
    x = _as_tensor(x)
    data = x.data.reshape(shape)
    orig = x.shape

    def backward(g):
        return (g.reshape(orig),)

    return _result(data, (x,), backward, "reshape")


def take(x, key):
    """Slice / index; supports basic indexing and integer-array gathers."""
    x = _as_tensor(x)
    data = x.data[key]
    advanced = isinstance(key, np.ndarray) or (
        isinstance(key, tuple) and any(isinstance(k, np.ndarray) for k in key)
    )

    def backward(g):
        gx = np.zeros_like(x.data)
        if advanced:
            np.add.at(gx, key, g)
        else:
            gx[key] += g
        return (gx,)

    return _result(data, (x,), backward, "take")


def tsum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(data, (x,), backward, "sum")


def embedding_lookup(table, ids):
    """Row lookup: table (V, E) gathered by an integer id array."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    data = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _result(data, (table,), backward, "embedding_lookup")


def cross_entropy(logits, targets, ignore_index=None, reduction="mean"):
    """Softmax cross entropy over rows of (N, V) logits.

    Rows whose target equals ignore_index contribute nothing. reduction
    "mean" averages over the counted rows; "none" returns per-row losses.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.ndim != 1 or logits.shape[0] != targets.shape[0]:
        raise ShapeError(
            f"cross_entropy: logits {logits.shape} vs targets {targets.shape}"
        )
    n, _ = logits.shape
    valid = np.ones(n, dtype=bool) if ignore_index is None else targets != ignore_index
    safe_targets = np.where(valid, targets, 0)

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = lse - shifted[np.arange(n), safe_targets]
    rows = np.where(valid, rows, 0.0)
    n_valid = int(valid.sum())

    if reduction == "mean":
        if n_valid == 0:
            raise ShapeError("cross_entropy: no rows left after ignore_index")
        data = rows.sum() / n_valid
    elif reduction == "none":
        data = rows
    else:
        raise ValueError(f"unknown reduction {reduction!r}")

    softmax_rows = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)

    def backward(g):
        gl = softmax_rows.copy()
        gl[np.arange(n), safe_targets] -= 1.0
        gl[~valid] = 0.0
        if reduction == "mean":
            gl *= float(g) / n_valid
        else:
            gl *= np.asarray(g)[:, None]
        return (gl,)

    return _result(data, (logits,), backward, "cross_entropy")


def reverse_sequences(x, lengths):
    """Reverse each row of a (B, T, ...) batch within its own length.

    Positions at or beyond a row's length map to themselves, so the padded
    tail stays in place. The mapping is an involution, hence backward applies
    the same permutation to the gradient.
    """
    x = _as_tensor(x)
    b, t = x.shape[0], x.shape[1]
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (b,):
        raise ShapeError(f"reverse_sequences: lengths {lengths.shape} for batch {b}")
    idx = np.tile(np.arange(t), (b, 1))
    for i, n in enumerate(lengths):
        idx[i, :n] = np.arange(n - 1, -1, -1)
    rows = np.arange(b)[:, None]
    data = x.data[rows, idx]

    def backward(g):
        return (g[rows, idx],)

    return _result(data, (x,), backward, "reverse_sequences")
