"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything downstream (prefix encoder, guider, generator, discriminator) is
built from the primitives here: broadcast-aware arithmetic, matmul, row
gather, axis reductions, an LSTM cell, 1-D convolution with max-over-time
pooling, numerically stable softmax, and cosine similarity.  Gradients are
accumulated into ``Parameter`` leaves by ``Tensor.backward`` and verified
against central finite differences by ``grad_check``.

Forward operations are pure: they never mutate inputs and identical inputs
produce bitwise-identical outputs.  ``Adam.step`` rebinds parameter arrays
instead of writing through them, so values captured by existing graphs stay
valid.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ValueError):
    """Non-finite values reached an operation that requires finite input."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Node in the computation graph holding a float64 ndarray.

    ``grad`` is populated by ``backward`` and accumulates across calls until
    cleared; it always matches ``data`` in shape.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        grad_on = _grad_enabled and (
            requires_grad or any(p.requires_grad for p in parents)
        )
        self.requires_grad = grad_on
        self.grad = None
        self._parents = tuple(parents) if grad_on else ()
        self._backward = backward if grad_on else None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Value-identical copy severed from the graph."""
        return Tensor(self.data)

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar root, accumulating into .grad."""
        if self.data.size != 1:
            raise DimensionError("backward requires a scalar root")
        order: list[Tensor] = []
        done: set[int] = set()
        stack: list[Tensor] = [self]
        while stack:
            node = stack[-1]
            if id(node) in done:
                stack.pop()
                continue
            pending = [p for p in node._parents
                       if p.requires_grad and id(p) not in done]
            if pending:
                stack.extend(pending)
            else:
                done.add(id(node))
                order.append(node)
                stack.pop()
        _accum(self, np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return reduce_mean(self, axis=axis)

    def max(self, axis):
        return reduce_max(self, axis=axis)

    def reshape(self, shape):
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable leaf: a value tensor paired with its gradient accumulator."""

    def __init__(self, data):
        super().__init__(data)
        self.requires_grad = True

    def zero_grad(self) -> None:
        self.grad = None


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    A, B = a.data, b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, A.shape))
        _accum(b, _unbroadcast(g, B.shape))

    return Tensor(A + B, parents=(a, b), backward=bwd)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    A, B = a.data, b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, A.shape))
        _accum(b, _unbroadcast(-g, B.shape))

    return Tensor(A - B, parents=(a, b), backward=bwd)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    A, B = a.data, b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * B, A.shape))
        _accum(b, _unbroadcast(g * A, B.shape))

    return Tensor(A * B, parents=(a, b), backward=bwd)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    A, B = a.data, b.data

    def bwd(g):
        _accum(a, _unbroadcast(g / B, A.shape))
        _accum(b, _unbroadcast(-g * A / (B * B), B.shape))

    return Tensor(A / B, parents=(a, b), backward=bwd)


def neg(a) -> Tensor:
    a = _wrap(a)

    def bwd(g):
        _accum(a, -g)

    return Tensor(-a.data, parents=(a,), backward=bwd)


def matmul(a, b) -> Tensor:
    """Matrix product for 2-D operands; 1-D operands are promoted."""
    a, b = _wrap(a), _wrap(b)
    A, B = a.data, b.data
    if A.ndim > 2 or B.ndim > 2:
        raise DimensionError("matmul operands must be rank 1 or 2")
    if A.shape[-1] != (B.shape[0] if B.ndim >= 1 else None):
        raise DimensionError(f"matmul inner dims differ: {A.shape} @ {B.shape}")

    def bwd(g):
        A2 = A if A.ndim == 2 else A[None, :]
        B2 = B if B.ndim == 2 else B[:, None]
        if A.ndim == 1 and B.ndim == 1:
            g2 = np.asarray(g).reshape(1, 1)
        elif A.ndim == 1:
            g2 = g[None, :]
        elif B.ndim == 1:
            g2 = g[:, None]
        else:
            g2 = g
        _accum(a, (g2 @ B2.T).reshape(A.shape))
        _accum(b, (A2.T @ g2).reshape(B.shape))

    return Tensor(A @ B, parents=(a, b), backward=bwd)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    A = a.data
    out = A.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, A.shape).copy())
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(ge, A.shape).copy())

    return Tensor(out, parents=(a,), backward=bwd)


def reduce_mean(a, axis=None) -> Tensor:
    a = _wrap(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(reduce_sum(a, axis=axis), 1.0 / n)


def reduce_max(a, axis) -> Tensor:
    """Max along one axis; ties route gradient to the first maximum."""
    a = _wrap(a)
    A = a.data
    idx = np.argmax(A, axis=axis)
    out = np.take_along_axis(A, np.expand_dims(idx, axis), axis).squeeze(axis)

    def bwd(g):
        ga = np.zeros_like(A)
        np.put_along_axis(ga, np.expand_dims(idx, axis),
                          np.expand_dims(g, axis), axis)
        _accum(a, ga)

    return Tensor(out, parents=(a,), backward=bwd)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    A = a.data

    def bwd(g):
        _accum(a, g.reshape(A.shape))

    return Tensor(A.reshape(shape), parents=(a,), backward=bwd)


def concat(tensors: Sequence[Tensor], axis=-1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, stop)
            _accum(t, g[tuple(sl)])

    return Tensor(np.concatenate(datas, axis=axis), parents=tuple(tensors),
                  backward=bwd)


def narrow(a, axis, start, length) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    a = _wrap(a)
    A = a.data
    sl = [slice(None)] * A.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def bwd(g):
        ga = np.zeros_like(A)
        ga[sl] = g
        _accum(a, ga)

    return Tensor(A[sl], parents=(a,), backward=bwd)


def take(a, idx) -> Tensor:
    """Gather rows of ``a`` (axis 0) by an integer index array of any shape."""
    a = _wrap(a)
    A = a.data
    idx = np.asarray(idx, dtype=np.int64)

    def bwd(g):
        ga = np.zeros_like(A)
        np.add.at(ga, idx, g)
        _accum(a, ga)

    return Tensor(A[idx], parents=(a,), backward=bwd)


def pick(a, idx) -> Tensor:
    """Select one column per row: (B, n) with idx (B,) -> (B,); 1-D picks a scalar."""
    a = _wrap(a)
    A = a.data
    if A.ndim == 1:
        i = int(idx)

        def bwd1(g):
            ga = np.zeros_like(A)
            ga[i] = g
            _accum(a, ga)

        return Tensor(A[i], parents=(a,), backward=bwd1)
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(A.shape[0])

    def bwd(g):
        ga = np.zeros_like(A)
        np.add.at(ga, (rows, idx), g)
        _accum(a, ga)

    return Tensor(A[rows, idx], parents=(a,), backward=bwd)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def tanh(a) -> Tensor:
    a = _wrap(a)
    y = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - y * y))

    return Tensor(y, parents=(a,), backward=bwd)


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    A = a.data
    y = np.where(A >= 0, 1.0 / (1.0 + np.exp(-np.abs(A))),
                 np.exp(-np.abs(A)) / (1.0 + np.exp(-np.abs(A))))

    def bwd(g):
        _accum(a, g * y * (1.0 - y))

    return Tensor(y, parents=(a,), backward=bwd)


def exp(a) -> Tensor:
    a = _wrap(a)
    y = np.exp(a.data)

    def bwd(g):
        _accum(a, g * y)

    return Tensor(y, parents=(a,), backward=bwd)


def log(a) -> Tensor:
    a = _wrap(a)
    A = a.data

    def bwd(g):
        _accum(a, g / A)

    return Tensor(np.log(A), parents=(a,), backward=bwd)


def sqrt(a) -> Tensor:
    a = _wrap(a)
    y = np.sqrt(a.data)

    def bwd(g):
        _accum(a, g * 0.5 / y)

    return Tensor(y, parents=(a,), backward=bwd)


def softplus(a) -> Tensor:
    """log(1 + e^x), computed without overflow for large |x|."""
    a = _wrap(a)
    A = a.data
    y = np.maximum(A, 0.0) + np.log1p(np.exp(-np.abs(A)))
    s = np.where(A >= 0, 1.0 / (1.0 + np.exp(-np.abs(A))),
                 np.exp(-np.abs(A)) / (1.0 + np.exp(-np.abs(A))))

    def bwd(g):
        _accum(a, g * s)

    return Tensor(y, parents=(a,), backward=bwd)


def clip_unit(a) -> Tensor:
    """Clamp to [-1, 1]; gradient passes where |x| <= 1."""
    a = _wrap(a)
    A = a.data
    mask = (np.abs(A) <= 1.0).astype(np.float64)

    def bwd(g):
        _accum(a, g * mask)

    return Tensor(np.clip(A, -1.0, 1.0), parents=(a,), backward=bwd)


def softmax(a, axis=-1) -> Tensor:
    """Stable softmax: strictly positive, sums to 1 along ``axis``."""
    a = _wrap(a)
    A = a.data
    if A.size == 0:
        raise DimensionError("softmax of empty tensor")
    if not np.all(np.isfinite(A)):
        raise NumericError("softmax input must be finite")
    e = np.exp(A - A.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(a, y * (g - dot))

    return Tensor(y, parents=(a,), backward=bwd)


def log_softmax(a, axis=-1) -> Tensor:
    a = _wrap(a)
    A = a.data
    if not np.all(np.isfinite(A)):
        raise NumericError("log_softmax input must be finite")
    shifted = A - A.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def bwd(g):
        gsum = g.sum(axis=axis, keepdims=True)
        _accum(a, g - np.exp(y) * gsum)

    return Tensor(y, parents=(a,), backward=bwd)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def affine(x, W, b=None) -> Tensor:
    """y = x W + b."""
    x, W = _wrap(x), _wrap(W)
    if x.data.shape[-1] != W.data.shape[0]:
        raise DimensionError(
            f"affine: input dim {x.data.shape[-1]} != weight rows {W.data.shape[0]}")
    out = matmul(x, W)
    return out if b is None else add(out, b)


def lstm_cell(x, h_prev, c_prev, W, b):
    """One LSTM step; gate order along the last weight axis is [i, f, o, g].

    ``W`` has shape (input_dim + hidden_dim, 4 * hidden_dim); ``x``/``h_prev``
    may be single vectors or (batch, dim) matrices.
    """
    x, h_prev, c_prev = _wrap(x), _wrap(h_prev), _wrap(c_prev)
    hidden = h_prev.data.shape[-1]
    if x.data.shape[-1] + hidden != W.data.shape[0] or W.data.shape[1] != 4 * hidden:
        raise DimensionError("lstm_cell: parameter layout does not match inputs")
    z = affine(concat([x, h_prev], axis=-1), W, b)
    i = sigmoid(narrow(z, -1, 0, hidden))
    f = sigmoid(narrow(z, -1, hidden, hidden))
    o = sigmoid(narrow(z, -1, 2 * hidden, hidden))
    g = tanh(narrow(z, -1, 3 * hidden, hidden))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


def conv1d_maxpool(x, weight, width, bias=None) -> Tensor:
    """Slide a width-``width`` filter bank over a sequence and max-pool over time.

    ``x`` is an embedded sequence, (P, d) or (B, P, d) with P >= width;
    ``weight`` has shape (width * d, k).  Returns the per-filter maxima,
    (k,) or (B, k).  No nonlinearity: the map stays positively homogeneous
    in ``x`` when ``bias`` is None.
    """
    x = _wrap(x)
    single = x.data.ndim == 2
    if single:
        x = reshape(x, (1,) + x.data.shape)
    if x.data.ndim != 3:
        raise DimensionError("conv1d_maxpool expects (P, d) or (B, P, d) input")
    batch, length, dim = x.data.shape
    if length == 0:
        raise DimensionError("conv1d_maxpool: empty sequence")
    if length < width:
        raise DimensionError(
            f"conv1d_maxpool: sequence length {length} < window {width}")
    if weight.data.shape[0] != width * dim:
        raise DimensionError("conv1d_maxpool: weight rows != width * dim")
    positions = length - width + 1
    rows = (np.arange(batch)[:, None, None] * length
            + np.arange(positions)[None, :, None]
            + np.arange(width)[None, None, :])
    windows = take(reshape(x, (batch * length, dim)), rows)
    windows = reshape(windows, (batch * positions, width * dim))
    conv = matmul(windows, weight)
    if bias is not None:
        conv = add(conv, bias)
    pooled = reduce_max(reshape(conv, (batch, positions, -1)), axis=1)
    return reshape(pooled, (pooled.data.shape[-1],)) if single else pooled


ZERO_NORM_EPS = 1e-12


def cosine_similarity(a, b) -> Tensor:
    """cos(a, b) for 1-D vectors, clamped to [-1, 1].

    A vector with norm below 1e-12 has no direction; the similarity is
    defined as 0 there (the neutral reward value) and carries no gradient.
    """
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape or a.data.ndim != 1:
        raise DimensionError("cosine_similarity expects equal-length vectors")
    if (np.linalg.norm(a.data) < ZERO_NORM_EPS
            or np.linalg.norm(b.data) < ZERO_NORM_EPS):
        return Tensor(0.0)
    dot = reduce_sum(mul(a, b))
    denom = mul(sqrt(reduce_sum(mul(a, a))), sqrt(reduce_sum(mul(b, b))))
    return clip_unit(div(dot, denom))


def row_cosine(a, b) -> Tensor:
    """Row-wise cosine for (B, d) operands -> (B,); zero-norm rows yield 0."""
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise DimensionError("row_cosine expects matching (B, d) matrices")
    na2 = reduce_sum(mul(a, a), axis=1)
    nb2 = reduce_sum(mul(b, b), axis=1)
    keep = ((na2.data >= ZERO_NORM_EPS ** 2)
            & (nb2.data >= ZERO_NORM_EPS ** 2)).astype(np.float64)
    pad = Tensor(1.0 - keep)  # keeps dropped rows' denominators away from 0
    denom = mul(sqrt(add(na2, pad)), sqrt(add(nb2, pad)))
    cos = mul(div(reduce_sum(mul(a, b), axis=1), denom), Tensor(keep))
    return clip_unit(cos)


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

class Adam:
    """Adam with bias correction; ``step`` clears gradients afterwards."""

    def __init__(self, params: Iterable[Parameter], lr=1e-3,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            mhat = self.m[i] / b1t
            vhat = self.v[i] / b2t
            # rebind rather than write in place: old arrays captured by
            # graphs built before this step must not change under them
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(params: Iterable[Parameter], max_norm: float) -> float:
    """Rescale gradients so their global L2 norm is at most ``max_norm``."""
    params = [p for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params)))
    if total > max_norm > 0:
        scale = max_norm / total
        for p in params:
            p.grad = p.grad * scale
    return total


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def grad_check(fn: Callable[[], Tensor], params: Sequence[Parameter],
               h: float = 1e-6) -> float:
    """Max normalized difference between analytic and central-difference grads.

    ``fn`` must be a deterministic scalar-valued function of ``params``.
    The per-coordinate error is |analytic - numeric| / max(1, |analytic|,
    |numeric|), so tiny gradients are compared absolutely.
    """
    if h <= 0:
        raise ValueError("grad_check: h must be positive")
    for p in params:
        p.grad = None
    fn().backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in params]
    worst = 0.0
    with no_grad():
        for p, grads in zip(params, analytic):
            flat = p.data.reshape(-1)
            gflat = grads.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(fn().data)
                flat[i] = orig - h
                fm = float(fn().data)
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * h)
                err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]),
                                                    abs(numeric))
                worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
