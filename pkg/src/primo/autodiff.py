"""Dense-tensor reverse-mode automatic differentiation with AdamW.

Tensors wrap float64 numpy arrays and record a define-by-run computation
graph: every differentiable op stores its parents and a closure that routes
the output gradient back to them. ``backward`` on a scalar loss walks the
graph in reverse topological order, accumulating gradients across all uses
of a node. The op set (matmul, broadcast arithmetic, relu/tanh/exp/log/
softplus/sqrt, log-softmax, reductions, concat/column-slice, batch norm)
is deliberately small: just enough to express MLP encoders, diagonal
Gaussian heads, and the losses built on top of them.
"""

from __future__ import annotations

import base64
import itertools
import json
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class DomainError(ValueError):
    """Numeric input outside an op's domain (e.g. log of a non-positive)."""


class ContractError(ValueError):
    """An operation precondition was violated."""


class BatchTooSmallError(ContractError):
    """Batch statistics are undefined for the given batch size."""


class NonFiniteGradientError(RuntimeError):
    """A parameter gradient contains NaN or infinity."""


_node_counter = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference-only forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode AD."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_counter)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        backward(self)

    # operator sugar; scalars and arrays lift to constant tensors
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    """Wrap an op result, recording the graph only when a parent needs it."""
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accum(t, g):
    if not (t.requires_grad or t._parents):
        return
    g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def backward(loss):
    """Reverse-topological gradient sweep from a scalar loss."""
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def back(g):
        _accum(a, g)
        _accum(b, g)

    return _make(data, (a, b), back)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def back(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(data, (a, b), back)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def back(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(data, (a, b), back)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data / b.data

    def back(g):
        _accum(a, g / b.data)
        _accum(b, -g * a.data / (b.data * b.data))

    return _make(data, (a, b), back)


def neg(a):
    a = _as_tensor(a)

    def back(g):
        _accum(a, -g)

    return _make(-a.data, (a,), back)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.data.shape} and {b.data.shape}")
    data = a.data @ b.data

    def back(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(data, (a, b), back)


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0

    def back(g):
        _accum(a, g * mask)

    return _make(a.data * mask, (a,), back)


def tanh(a):
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def back(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), back)


def exp(a):
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def back(g):
        _accum(a, g * out_data)

    return _make(out_data, (a,), back)


def log(a):
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive input")

    def back(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), back)


def sqrt(a):
    a = _as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt requires non-negative input")
    out_data = np.sqrt(a.data)

    def back(g):
        _accum(a, g * 0.5 / out_data)

    return _make(out_data, (a,), back)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a):
    a = _as_tensor(a)
    data = np.logaddexp(0.0, a.data)

    def back(g):
        _accum(a, g * _sigmoid(a.data))

    return _make(data, (a,), back)


def log_softmax(a):
    """Row-wise log-softmax over the last axis, max-stabilized."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    data = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def back(g):
        _accum(a, g - np.exp(data) * g.sum(axis=-1, keepdims=True))

    return _make(data, (a,), back)


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _make(data, (a,), back)


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.shape[axis]

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape) / count)

    return _make(data, (a,), back)


def concat(tensors, axis=1):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.data.shape[axis] for t in tensors])

    def back(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _make(data, tuple(tensors), back)


def slice_cols(a, start, stop):
    """Contiguous column slice of a 2-D tensor."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"slice_cols requires a 2-D tensor, got shape {a.data.shape}")
    data = a.data[:, start:stop]

    def back(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        _accum(a, full)

    return _make(data, (a,), back)


def slice_rows(a, start, stop):
    """Contiguous leading-axis slice."""
    a = _as_tensor(a)
    data = a.data[start:stop]

    def back(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        _accum(a, full)

    return _make(data, (a,), back)


def take_rows(a, idx):
    """Gather rows by index; duplicate indices accumulate in the backward."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    data = a.data[idx]

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _make(data, (a,), back)


def square(a):
    a = _as_tensor(a)
    return mul(a, a)


# ---------------------------------------------------------------------------
# parameters and optimizer


class Parameter:
    """A named trainable tensor with AdamW moment buffers."""

    __slots__ = ("name", "tensor", "first_moment", "second_moment", "step_count")

    def __init__(self, name, data):
        self.name = name
        self.tensor = Tensor(data, requires_grad=True)
        self.first_moment = np.zeros_like(self.tensor.data)
        self.second_moment = np.zeros_like(self.tensor.data)
        self.step_count = 0

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self):
        self.tensor.grad = None

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.data.shape})"


class AdamW:
    """Adam with decoupled weight decay.

    The decay step ``p -= lr * wd * p`` is applied before the bias-corrected
    Adam update, so ``weight_decay=0`` reduces exactly to Adam. Gradients are
    zeroed after each step.
    """

    def __init__(self, params, lr=1e-3, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self):
        for p in self.params:
            g = p.tensor.grad
            if g is None:
                g = np.zeros_like(p.tensor.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient in parameter {p.name!r}")
            if self.weight_decay != 0.0:
                p.tensor.data -= self.lr * self.weight_decay * p.tensor.data
            p.step_count += 1
            t = p.step_count
            p.first_moment *= self.beta1
            p.first_moment += (1.0 - self.beta1) * g
            p.second_moment *= self.beta2
            p.second_moment += (1.0 - self.beta2) * (g * g)
            m_hat = p.first_moment / (1.0 - self.beta1**t)
            v_hat = p.second_moment / (1.0 - self.beta2**t)
            p.tensor.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        self.zero_grad()

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# batch normalization on a feature block


class BatchNormState:
    """Batch norm with a fixed scale and a learnable offset.

    ``gamma`` is a constant by construction; only ``beta`` trains. Running
    statistics follow the usual exponential moving average (unbiased batch
    variance feeds the running buffer; the biased estimate normalizes the
    batch itself).
    """

    def __init__(self, dim, gamma=1.0, momentum=0.1, eps=1e-5, name="bn"):
        if gamma <= 0:
            raise ContractError("gamma must be positive")
        if not 0.0 < momentum < 1.0:
            raise ContractError("momentum must lie in (0, 1)")
        self.gamma = float(gamma)
        self.beta = Parameter(f"{name}.beta", np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps


def batch_norm_mean(x, state, mode):
    """Normalize rows of ``x`` with batch (train) or running (eval) statistics."""
    if mode not in ("train", "eval"):
        raise ContractError(f"unknown batch norm mode {mode!r}")
    x = _as_tensor(x)
    if mode == "train":
        n = x.data.shape[0]
        if n < 2:
            raise BatchTooSmallError(f"batch norm in train mode needs >= 2 rows, got {n}")
        mu = tmean(x, axis=0, keepdims=True)
        centered = sub(x, mu)
        var = tmean(square(centered), axis=0, keepdims=True)
        inv = div(Tensor(np.float64(state.gamma)), sqrt(add(var, state.eps)))
        out = add(mul(centered, inv), state.beta.tensor)
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mu.data.ravel()
        unbiased = var.data.ravel() * n / (n - 1)
        state.running_var = (1.0 - m) * state.running_var + m * unbiased
        return out
    scale = state.gamma / np.sqrt(state.running_var + state.eps)
    shifted = mul(sub(x, Tensor(state.running_mean)), Tensor(scale))
    return add(shifted, state.beta.tensor)


# ---------------------------------------------------------------------------
# checkpoint serialization (little-endian float64 payloads in a JSON manifest)

CHECKPOINT_FORMAT = "primo-checkpoint"
CHECKPOINT_VERSION = 1


def save_arrays(path, header, arrays):
    """Write named float64 arrays plus a header dict as a JSON manifest."""
    entries = {}
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries[name] = {
            "shape": list(arr.shape),
            "dtype": "<f8",
            "data": base64.b64encode(arr.tobytes()).decode("ascii"),
        }
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "header": header,
        "arrays": entries,
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_arrays(path):
    """Read a manifest written by :func:`save_arrays`; returns (header, arrays)."""
    with open(path, "r", encoding="ascii") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ContractError(f"not a {CHECKPOINT_FORMAT} file: {path}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported checkpoint version {doc.get('version')}")
    arrays = {}
    for name, entry in doc["arrays"].items():
        raw = base64.b64decode(entry["data"])
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(np.float64)
    return doc["header"], arrays
