"""Minimal numpy-backed neural network kernel.

Reverse-mode autodiff over a small set of tensor ops (enough for LSTM
encoder/decoder stacks with additive attention), a finite-difference
gradient oracle, and Adam/SGD optimizers.

Precision: float32 by default for training and inference; build tensors
from float64 arrays to run the same graphs in double precision (the
gradient checker expects that). Graph recording is disabled inside
``no_grad()`` blocks, which is how inference runs.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import AddrTagError

CE_EPS = 1e-12


class ShapeMismatch(AddrTagError):
    pass


class NotScalarLoss(AddrTagError):
    pass


class IndexOutOfRange(AddrTagError):
    pass


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording (forward values only) inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-d array node in the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents")

    def __init__(self, data, requires_grad: bool = False, _parents=()):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        # sequence of (parent_tensor, fn: upstream_grad -> parent_grad)
        self._parents = _parents

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable tensor."""
        if self.data.size != 1:
            raise NotScalarLoss(f"loss has shape {self.shape}, expected a scalar")
        # iterative topological order (graphs can be thousands of nodes deep)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad += g
            for parent, fn in node._parents:
                pg = fn(g)
                acc = grads.get(id(parent))
                if acc is None:
                    # copy: pg may alias g or a view of it, and we mutate in place
                    grads[id(parent)] = np.array(pg)
                else:
                    acc += pg

    # -- operator sugar --------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def parameter(data, rng: np.random.Generator | None = None, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def _tracked(*tensors: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad or t._parents for t in tensors)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- primitive ops --------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    if not _tracked(a, b):
        return Tensor(out)
    return Tensor(out, _parents=(
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    if not _tracked(a, b):
        return Tensor(out)
    return Tensor(out, _parents=(
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(-g, b.data.shape)),
    ))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    if not _tracked(a, b):
        return Tensor(out)
    return Tensor(out, _parents=(
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"cannot matmul {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data
    if not _tracked(a, b):
        return Tensor(out)
    return Tensor(out, _parents=(
        (a, lambda g: g @ b.data.T),
        (b, lambda g: a.data.T @ g),
    ))


def affine(x, w, b=None) -> Tensor:
    """y = x @ w.T (+ b). ``w`` is stored [out_width, in_width]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeMismatch(f"affine: x {x.data.shape} vs w {w.data.shape}")
    out = x.data @ w.data.T
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
    tracked = _tracked(x, w) or (b is not None and _tracked(b))
    if not tracked:
        return Tensor(out)
    parents = [
        (x, lambda g: g @ w.data),
        (w, lambda g: g.T @ x.data),
    ]
    if b is not None:
        parents.append((b, lambda g: _unbroadcast(g, b.data.shape)))
    return Tensor(out, _parents=tuple(parents))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    if not _tracked(x):
        return Tensor(out)
    return Tensor(out, _parents=((x, lambda g: g * out * (1.0 - out)),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    if not _tracked(x):
        return Tensor(out)
    return Tensor(out, _parents=((x, lambda g: g * (1.0 - out * out)),))


def log(x) -> Tensor:
    x = as_tensor(x)
    out = np.log(x.data)
    if not _tracked(x):
        return Tensor(out)
    return Tensor(out, _parents=((x, lambda g: g / x.data),))


def clip_min(x, floor: float) -> Tensor:
    """max(x, floor) elementwise; gradient is zero where clipped."""
    x = as_tensor(x)
    out = np.maximum(x.data, floor)
    if not _tracked(x):
        return Tensor(out)
    keep = (x.data > floor).astype(x.data.dtype)
    return Tensor(out, _parents=((x, lambda g: g * keep),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    if not _tracked(*tensors):
        return Tensor(out)
    parents = []
    start = 0
    for t in tensors:
        size = t.data.shape[axis]
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(start, start + size)
        parents.append((t, lambda g, sl=tuple(sl): np.ascontiguousarray(g[sl])))
        start += size
    return Tensor(out, _parents=tuple(parents))


def narrow(x: Tensor, axis: int, start: int, size: int) -> Tensor:
    x = as_tensor(x)
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, start + size)
    sl = tuple(sl)
    out = x.data[sl].copy()

    def back(g, sl=sl):
        full = np.zeros_like(x.data)
        full[sl] = g
        return full

    if not _tracked(x):
        return Tensor(out)
    return Tensor(out, _parents=((x, back),))


def gather_rows(table: Tensor, indices) -> Tensor:
    """Select rows of a 2-d tensor: out[i] = table[indices[i]]."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.intp)
    out = table.data[idx]

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return full

    if not _tracked(table):
        return Tensor(out)
    return Tensor(out, _parents=((table, back),))


def pick(x: Tensor, indices) -> Tensor:
    """out[i] = x[i, indices[i]] for a 2-d tensor."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    rows = np.arange(x.data.shape[0])
    out = x.data[rows, idx]

    def back(g):
        full = np.zeros_like(x.data)
        full[rows, idx] = g
        return full

    if not _tracked(x):
        return Tensor(out)
    return Tensor(out, _parents=((x, back),))


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.data.sum())
    if not _tracked(x):
        return Tensor(out)
    return Tensor(out, _parents=((x, lambda g: np.broadcast_to(g, x.data.shape).astype(x.data.dtype)),))


def softmax(x, axis: int = -1) -> Tensor:
    """Probabilities along ``axis``, computed with max-subtraction."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - dot)

    if not _tracked(x):
        return Tensor(out)
    return Tensor(out, _parents=((x, back),))


def cross_entropy(probs, target: int) -> Tensor:
    """-ln(max(probs[target], eps)) for a single probability vector."""
    probs = as_tensor(probs)
    if probs.data.ndim != 1:
        raise ShapeMismatch(f"cross_entropy expects a vector, got {probs.data.shape}")
    k = probs.data.shape[0]
    if not (0 <= target < k):
        raise IndexOutOfRange(f"target {target} out of range for {k} classes")
    picked = narrow(probs, 0, int(target), 1)
    return -sum_all(log(clip_min(picked, CE_EPS)))


# -- LSTM cell -------------------------------------------------------------

@dataclass
class LstmParams:
    """All weights of one LSTM cell (separate gate matrices i, f, g, o)."""

    d_in: int
    d_h: int
    w_i: Tensor
    w_f: Tensor
    w_g: Tensor
    w_o: Tensor
    u_i: Tensor
    u_f: Tensor
    u_g: Tensor
    u_o: Tensor
    b_i: Tensor
    b_f: Tensor
    b_g: Tensor
    b_o: Tensor

    def params(self) -> list[Tensor]:
        return [self.w_i, self.w_f, self.w_g, self.w_o,
                self.u_i, self.u_f, self.u_g, self.u_o,
                self.b_i, self.b_f, self.b_g, self.b_o]


def init_lstm(d_in: int, d_h: int, rng: np.random.Generator, dtype=np.float32) -> LstmParams:
    """Uniform(-1/sqrt(d_h), 1/sqrt(d_h)) weights, zero biases, forget bias +1."""
    bound = 1.0 / math.sqrt(d_h)

    def w(rows, cols):
        return Tensor(rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype), requires_grad=True)

    def b(fill=0.0):
        return Tensor(np.full(d_h, fill, dtype=dtype), requires_grad=True)

    return LstmParams(
        d_in=d_in, d_h=d_h,
        w_i=w(d_h, d_in), w_f=w(d_h, d_in), w_g=w(d_h, d_in), w_o=w(d_h, d_in),
        u_i=w(d_h, d_h), u_f=w(d_h, d_h), u_g=w(d_h, d_h), u_o=w(d_h, d_h),
        b_i=b(), b_f=b(1.0), b_g=b(), b_o=b(),
    )


def lstm_step(x, h, c, p: LstmParams) -> tuple[Tensor, Tensor]:
    """One LSTM cell update. Accepts vectors or [batch, width] matrices."""
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    vector_mode = x.data.ndim == 1
    if vector_mode:
        x, h, c = _row(x), _row(h), _row(c)
    if x.data.shape[1] != p.d_in:
        raise ShapeMismatch(f"input width {x.data.shape[1]} != d_in {p.d_in}")
    if h.data.shape[1] != p.d_h or c.data.shape[1] != p.d_h:
        raise ShapeMismatch(f"state width {h.data.shape[1]}/{c.data.shape[1]} != d_h {p.d_h}")
    i = sigmoid(add(affine(x, p.w_i, p.b_i), affine(h, p.u_i)))
    f = sigmoid(add(affine(x, p.w_f, p.b_f), affine(h, p.u_f)))
    g = tanh(add(affine(x, p.w_g, p.b_g), affine(h, p.u_g)))
    o = sigmoid(add(affine(x, p.w_o, p.b_o), affine(h, p.u_o)))
    c2 = add(mul(f, c), mul(i, g))
    h2 = mul(o, tanh(c2))
    if vector_mode:
        return _flat(h2), _flat(c2)
    return h2, c2


def _row(t: Tensor) -> Tensor:
    out = t.data.reshape(1, -1)
    if not _tracked(t):
        return Tensor(out)
    return Tensor(out, _parents=((t, lambda g: g.reshape(t.data.shape)),))


def _flat(t: Tensor) -> Tensor:
    out = t.data.reshape(-1)
    if not _tracked(t):
        return Tensor(out)
    return Tensor(out, _parents=((t, lambda g: g.reshape(t.data.shape)),))


# -- optimizers ------------------------------------------------------------

def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


class Sgd:
    """Plain gradient descent."""

    algorithm = "sgd"

    def __init__(self, params: Sequence[Tensor], learning_rate: float = 1e-3):
        self.params = list(params)
        self.learning_rate = learning_rate

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ShapeMismatch(f"grad {p.grad.shape} vs param {p.data.shape}")
            p.data -= (self.learning_rate * p.grad).astype(p.data.dtype, copy=False)


class Adam:
    """Adaptive-moment estimation (beta1=0.9, beta2=0.999, eps=1e-8)."""

    algorithm = "adam"

    def __init__(self, params: Sequence[Tensor], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                g = np.zeros_like(p.data)
            else:
                if p.grad.shape != p.data.shape:
                    raise ShapeMismatch(f"grad {p.grad.shape} vs param {p.data.shape}")
                g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.data -= (self.learning_rate * update).astype(p.data.dtype, copy=False)


def make_optimizer(name: str, params: Sequence[Tensor], learning_rate: float):
    if name == "adam":
        return Adam(params, learning_rate)
    if name == "sgd":
        return Sgd(params, learning_rate)
    raise ValueError(f"unknown optimizer {name!r}")


# -- gradient oracle --------------------------------------------------------

def grad_check(model_fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float) -> float:
    """Compare reverse-mode gradients against central finite differences.

    ``model_fn`` must rebuild and return the scalar loss from the current
    parameter values, deterministically. Returns the max over coordinates of
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8). Run with
    float64 parameters for meaningful thresholds.
    """
    zero_grad(params)
    loss = model_fn()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    max_err = 0.0
    with no_grad():
        for p, ana in zip(params, analytic):
            flat = p.data.reshape(-1)
            flat_ana = ana.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = float(model_fn().data)
                flat[i] = orig - eps
                f_minus = float(model_fn().data)
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * eps)
                a = float(flat_ana[i])
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                if err > max_err:
                    max_err = err
    zero_grad(params)
    return max_err
