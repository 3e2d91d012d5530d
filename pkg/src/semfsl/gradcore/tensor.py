"""Reverse-mode differentiation over float64 numpy arrays.

Every op returns a :class:`Tensor` that remembers its inputs and a closure
mapping the output gradient to input gradients.  Nodes whose inputs are all
constants drop their history, so evaluation-mode forward passes build no
graph at all.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, DimensionError, LabelIndexError, UsageError

TRAIN = "train"
EVAL = "eval"


class Tensor:
    __slots__ = ("data", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = any(p.requires_grad for p in parents)
        if self.requires_grad:
            self.parents = parents
            self.backward_fn = backward_fn
        else:
            self.parents = ()
            self.backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise UsageError("division is only defined by constant scalars")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """Trainable leaf carrying its own gradient and momentum buffers."""

    __slots__ = ("name", "grad", "momentum")

    def __init__(self, value, name: str = ""):
        super().__init__(value)
        self.data = np.array(self.data, dtype=np.float64)  # own the buffer
        self.requires_grad = True
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.momentum = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return Tensor(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return Tensor(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data
    return Tensor(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data
    return Tensor(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def affine(x, W, bias) -> Tensor:
    """Row-wise ``x @ W + bias`` for ``x`` of shape (batch, m)."""
    x, W, bias = as_tensor(x), as_tensor(W), as_tensor(bias)
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0]:
        raise DimensionError(f"affine: input shape {x.shape} does not conform to weight shape {W.shape}")
    if bias.shape != (W.shape[1],):
        raise DimensionError(f"affine: bias shape {bias.shape} does not match weight shape {W.shape}")
    xd, Wd = x.data, W.data
    return Tensor(
        xd @ Wd + bias.data,
        (x, W, bias),
        lambda g: (g @ Wd.T, xd.T @ g, g.sum(axis=0)),
    )


def relu(x) -> Tensor:
    x = as_tensor(x)
    gate = x.data > 0
    return Tensor(np.where(gate, x.data, 0.0), (x,), lambda g: (g * gate,))


def dropout(x, p: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout probability must lie in [0, 1), got {p}")
    if mode not in (TRAIN, EVAL):
        raise ConfigurationError(f"mode must be {TRAIN!r} or {EVAL!r}, got {mode!r}")
    x = as_tensor(x)
    if mode == EVAL:
        return x
    if rng is None:
        raise UsageError("train-mode dropout needs a random generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return Tensor(x.data * mask, (x,), lambda g: (g * mask,))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.data.size == 0:
        raise DimensionError("softmax of an empty tensor")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor(y, (x,), backward)


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor(out, (x,), backward)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / float(count))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return Tensor(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def sq_euclidean(a, b) -> Tensor:
    """Squared Euclidean distance over the last axis (broadcasting leading axes)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1:] != b.shape[-1:]:
        raise DimensionError(f"sq_euclidean: shapes {a.shape} and {b.shape} differ in length")
    _check_broadcast(a.data, b.data, "sq_euclidean")
    diff = a.data - b.data
    sa, sb = a.shape, b.shape

    def backward(g):
        full = 2.0 * diff * np.expand_dims(g, -1)
        return _unbroadcast(full, sa), _unbroadcast(-full, sb)

    return Tensor(np.einsum("...i,...i->...", diff, diff), (a, b), backward)


def cross_entropy(logits, labels) -> Tensor:
    """Softmax cross-entropy; rows of a 2-D input are averaged."""
    logits = as_tensor(logits)
    x = logits.data
    single = x.ndim == 1
    if single:
        x = x[None, :]
    labels = np.atleast_1d(np.asarray(labels))
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n = x.shape[1]
    if not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0 or labels.max() >= n:
        raise LabelIndexError(f"labels must be integers in [0, {n}), got {labels.tolist()}")
    labels = labels.astype(np.intp)
    rows = np.arange(x.shape[0])
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    total = e.sum(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(total[:, 0])
    losses = lse - x[rows, labels]
    batch = x.shape[0]

    def backward(g):
        grad = e / total
        grad[rows, labels] -= 1.0
        grad *= g / batch
        return (grad[0] if single else grad,)

    return Tensor(losses.mean(), (logits,), backward)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into ``grad`` of every reachable Parameter."""
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        shape = getattr(loss, "shape", None)
        raise UsageError(f"backward needs a scalar root, got shape {shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g.reshape(node.data.shape)
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
