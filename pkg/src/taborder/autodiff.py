"""Minimal reverse-mode autodiff on numpy arrays.

Covers exactly the operations the order/prediction branches need: broadcasted
arithmetic, batched matmul, softmax, layer norm, GELU (exact Phi form), softplus,
sigmoid, and a straight-through identity for hard/soft mask gating. Tensors are
immutable once produced; parameters are mutated only through the optimizer.

Two float widths are supported: float32 for training, float64 for gradient
verification. The active width is process-global, set via ``precision``.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy import special

_DTYPE = np.float32


def current_dtype():
    return _DTYPE


def set_precision(mode):
    """mode: 'float32' or 'float64'."""
    global _DTYPE
    if mode not in ("float32", "float64"):
        raise ValueError(f"unknown precision mode {mode!r}")
    _DTYPE = np.float32 if mode == "float32" else np.float64


@contextmanager
def precision(mode):
    global _DTYPE
    prev = _DTYPE
    set_precision(mode)
    try:
        yield
    finally:
        _DTYPE = prev


class AutodiffError(RuntimeError):
    pass


class NonFiniteError(AutodiffError):
    pass


def _unbroadcast(grad, shape):
    """Reduce a broadcasted gradient back to `shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_done")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None):
        arr = np.asarray(data, dtype=_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._vjp = _vjp if self.requires_grad else None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def check_finite(self, what="tensor"):
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite values in {what}")
        return self

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        return add(as_tensor(other), -self)

    def __truediv__(self, other):
        other = as_tensor(other)
        return mul(self, power(other, -1.0))

    def __rtruediv__(self, other):
        return mul(as_tensor(other), power(self, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def backward(self):
        """Reverse-mode accumulation from a scalar tensor.

        Fills `.grad` on every reachable leaf with requires_grad. A second
        call on the same tensor is an error (the tape is consumed).
        """
        if self.data.size != 1:
            raise AutodiffError("backward requires a scalar tensor")
        if self._done:
            raise AutodiffError("backward already called on this tensor")
        if not self.requires_grad:
            raise AutodiffError("tensor is detached from the graph")
        self._done = True

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is not None:
                for parent, pg in zip(node._parents, node._vjp(g)):
                    if not parent.requires_grad or pg is None:
                        continue
                    acc = grads.get(id(parent))
                    grads[id(parent)] = pg if acc is None else acc + pg
            elif node._parents:
                raise AutodiffError("graph node missing vjp")
            else:
                node.grad = g if node.grad is None else node.grad + g


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data):
    return Tensor(np.asarray(data, dtype=_DTYPE), requires_grad=True)


# -- primitives ---------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor(out, _parents=(a, b), _vjp=vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return Tensor(out, _parents=(a, b), _vjp=vjp)


def power(a, exponent):
    a = as_tensor(a)
    out = a.data**exponent

    def vjp(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = np.matmul(a.data, b.data)

    def vjp(g):
        bt = np.swapaxes(b.data, -1, -2)
        at = np.swapaxes(a.data, -1, -2)
        ga = np.matmul(g, bt)
        gb = np.matmul(at, g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return Tensor(out, _parents=(a, b), _vjp=vjp)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.data.shape).copy(),)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.data.shape[ax] for ax in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def transpose(a, axes):
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def vjp(g):
        return (np.transpose(g, inv),)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out, _parents=tuple(tensors), _vjp=vjp)


def take(a, idx):
    a = as_tensor(a)
    out = a.data[idx]

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def log(a):
    a = as_tensor(a)
    out = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def vjp(g):
        return (g * 0.5 / out,)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def erf(a):
    a = as_tensor(a)
    out = special.erf(a.data).astype(a.data.dtype)
    coeff = 2.0 / math.sqrt(math.pi)

    def vjp(g):
        return (g * coeff * np.exp(-a.data * a.data),)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def sigmoid(a):
    a = as_tensor(a)
    out = special.expit(a.data).astype(a.data.dtype)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def softplus(a):
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data).astype(a.data.dtype)

    def vjp(g):
        return (g * special.expit(a.data).astype(a.data.dtype),)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def gelu(x):
    """Exact-Phi GELU: x * Phi(x)."""
    x = as_tensor(x)
    return mul(x, mul(add(erf(mul(x, 1.0 / math.sqrt(2.0))), 1.0), 0.5))


def layer_norm(x, gain, shift, eps=1e-5):
    """Per-last-axis zero-mean unit-variance normalization, then affine."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = as_tensor(x)
    mu = tmean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    normed = mul(centered, power(var + eps, -0.5))
    return add(mul(normed, gain), shift)


def straight_through(soft, hard_values):
    """Forward: the hard values. Backward: identity into the soft surrogate."""
    soft = as_tensor(soft)
    hard = np.asarray(hard_values, dtype=soft.data.dtype)
    if hard.shape != soft.data.shape:
        raise ValueError("hard/soft shape mismatch")

    def vjp(g):
        return (g,)

    return Tensor(hard, _parents=(soft,), _vjp=vjp)


def dropout(x, rate, rng):
    """Inverted dropout with the shared seeded generator; rate=0 is identity."""
    if rate == 0.0:
        return as_tensor(x)
    x = as_tensor(x)
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    scale = 1.0 / (1.0 - rate)

    def vjp(g):
        return (g * keep * scale,)

    return Tensor(x.data * keep * scale, _parents=(x,), _vjp=vjp)


def attention_with_bias(queries, keys, values, bias, heads):
    """Multi-head scaled-dot-product attention with an additive score bias.

    queries/keys/values: [..., T, h]; bias broadcastable to [..., T, T] (added
    to the pre-softmax scores of every head). h must divide evenly by heads.
    """
    q, k, v = as_tensor(queries), as_tensor(keys), as_tensor(values)
    T, h = q.shape[-2], q.shape[-1]
    if k.shape != q.shape or v.shape != q.shape:
        raise ValueError("queries/keys/values shape mismatch")
    if h % heads != 0:
        raise ValueError(f"width {h} not divisible by {heads} heads")
    bias = as_tensor(bias)
    if bias.shape[-2:] != (T, T):
        raise ValueError(f"bias trailing shape {bias.shape} != ({T}, {T})")
    hd = h // heads
    batch = q.shape[:-2]
    nb = len(batch)

    def split_heads(t):
        t = reshape(t, batch + (T, heads, hd))
        perm = tuple(range(nb)) + (nb + 1, nb, nb + 2)
        return transpose(t, perm)  # [..., heads, T, hd]

    qh, kh, vh = split_heads(q), split_heads(k), split_heads(v)
    kt = transpose(kh, tuple(range(nb)) + (nb, nb + 2, nb + 1))
    scores = mul(matmul(qh, kt), 1.0 / math.sqrt(hd))
    bexp = reshape(bias, bias.shape[:-2] + (1, T, T)) if bias.ndim >= 2 else bias
    weights = softmax(add(scores, bexp), axis=-1)
    out = matmul(weights, vh)  # [..., heads, T, hd]
    perm_back = tuple(range(nb)) + (nb + 1, nb, nb + 2)
    out = transpose(out, perm_back)
    return reshape(out, batch + (T, h))


# -- optimizer ----------------------------------------------------------


@dataclass
class AdamState:
    """Adam moments plus the warmup/decay settings shared by every step."""

    base_lr: float
    warmup_ratio: float = 0.03
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def lr_at(self, step, total_steps):
        """Linear warmup over ceil(warmup_ratio * total_steps) steps, then flat."""
        warmup = math.ceil(self.warmup_ratio * total_steps)
        if warmup > 0 and step <= warmup:
            return self.base_lr * step / warmup
        return self.base_lr


def adam_step(params, grads, state, total_steps):
    """One decoupled-weight-decay Adam update, in place on `params` data.

    params: dict name -> Tensor (leaves); grads: dict name -> ndarray.
    """
    if state.step_count >= total_steps:
        raise AutodiffError("optimizer exhausted its step budget")
    state.step_count += 1
    t = state.step_count
    lr = state.lr_at(t, total_steps)
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise AutodiffError(f"gradient shape mismatch for {name}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        update = mhat / (np.sqrt(vhat) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p.data
        p.data = p.data - (lr * update).astype(p.data.dtype)


# -- gradient verification ---------------------------------------------


def grad_check(f, params, fd_step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    f: callable taking no arguments, returning a scalar Tensor built from
    `params` (dict name -> Tensor). Runs in the active precision; callers
    should use float64.
    """
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    for p in params.values():
        p.grad = None
    loss = f()
    loss.check_finite("loss")
    loss.backward()
    worst = 0.0
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + fd_step
            hi = f().item()
            flat[i] = orig - fd_step
            lo = f().item()
            flat[i] = orig
            if not (math.isfinite(hi) and math.isfinite(lo)):
                raise NonFiniteError(f"non-finite loss while probing {name}")
            fd = (hi - lo) / (2 * fd_step)
            err = abs(analytic.reshape(-1)[i] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    return worst
