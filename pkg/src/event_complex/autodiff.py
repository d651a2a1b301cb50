"""Minimal reverse-mode autodiff over numpy arrays.

Only the operations the event-pair model and the consistency losses need:
matmul, broadcasting add/sub/mul/div, tanh, sigmoid, log, abs, a scalar
floor, sums, concatenation, stacking and indexing, and softmax. Graphs are
built eagerly and used once.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = "",
                 _parents: tuple = (), _backward: Optional[Callable] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None
        self.name = name

    def __repr__(self):
        return f"Tensor({self.data!r}{', grad' if self.requires_grad else ''})"

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, seed: Optional[np.ndarray] = None):
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents)
        grads = {id(self): seed}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, o): return matmul(self, o)
    def __getitem__(self, idx): return take(self, idx)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ----------------------------------------------------------------------------
# kink monitoring: grad_check uses this to skip perturbations that straddle a
# non-differentiable point of abs / floor / hinge.
# ----------------------------------------------------------------------------

_KINK_LOG: Optional[list] = None


@contextlib.contextmanager
def record_kinks():
    global _KINK_LOG
    prev, _KINK_LOG = _KINK_LOG, []
    try:
        yield _KINK_LOG
    finally:
        _KINK_LOG = prev


def _note_kink(arr: np.ndarray):
    if _KINK_LOG is not None:
        _KINK_LOG.append(np.array(arr, copy=True))


# ----------------------------------------------------------------------------
# ops
# ----------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data + b.data, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data - b.data, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data * b.data, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g * b.data, a.shape),
                                       _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return Tensor(out, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g / b.data, a.shape),
                                       _unbroadcast(-g * out / b.data, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if b.data.ndim == 1:
            ga = np.multiply.outer(g, b.data)
            gb = a.data.T @ g if a.data.ndim == 2 else g * a.data
        else:
            ga = g @ b.data.T
            gb = a.data.T @ g if a.data.ndim == 2 else np.outer(a.data, g)
        return ga, gb

    return Tensor(a.data @ b.data, _parents=(a, b), _backward=back)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return Tensor(out, _parents=(x,), _backward=lambda g: (g * (1.0 - out * out),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor(out, _parents=(x,), _backward=lambda g: (g * out * (1.0 - out),))


def log(x) -> Tensor:
    x = as_tensor(x)
    return Tensor(np.log(x.data), _parents=(x,), _backward=lambda g: (g / x.data,))


def absolute(x) -> Tensor:
    """|x| with subgradient 0 at x == 0."""
    x = as_tensor(x)
    _note_kink(x.data)
    return Tensor(np.abs(x.data), _parents=(x,), _backward=lambda g: (g * np.sign(x.data),))


def floor_at(x, lo: float) -> Tensor:
    """max(x, lo) elementwise; entries at or below ``lo`` get zero gradient."""
    x = as_tensor(x)
    _note_kink(x.data - lo)
    mask = x.data > lo
    # NaN passes through so divergence is not masked by the floor
    return Tensor(np.where(mask | np.isnan(x.data), x.data, lo), _parents=(x,), _backward=lambda g: (g * mask,))


def hinge(x) -> Tensor:
    """max(0, x)."""
    return floor_at(x, 0.0)


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor(x.data.sum(axis=axis, keepdims=keepdims), _parents=(x,), _backward=back)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    ax = axis % xs[0].data.ndim
    bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

    def back(g):
        sl = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl[ax] = slice(lo, hi)
            out.append(g[tuple(sl)])
        return out

    return Tensor(np.concatenate([x.data for x in xs], axis=ax), _parents=tuple(xs), _backward=back)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    return Tensor(np.stack([x.data for x in xs], axis=axis), _parents=tuple(xs),
                  _backward=lambda g: [np.take(g, k, axis=axis) for k in range(len(xs))])


def take(x, idx) -> Tensor:
    """Numpy-style indexing; repeated fancy indices accumulate gradient."""
    x = as_tensor(x)
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (slice, int, np.integer)) or i is Ellipsis for i in parts)

    def back(g):
        out = np.zeros_like(x.data)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return Tensor(x.data[idx], _parents=(x,), _backward=back)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return Tensor(x.data.reshape(shape), _parents=(x,), _backward=lambda g: (g.reshape(x.shape),))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor(out, _parents=(x,), _backward=back)


# ----------------------------------------------------------------------------
# gradient checking
# ----------------------------------------------------------------------------

def grad_check(loss_evaluator: Callable[[], Tensor], params: Iterable[Tensor],
               epsilon: float = 1e-6, kink_margin: float = 1e-6,
               max_entries: Optional[int] = None, rng=None) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``loss_evaluator`` rebuilds the graph from the current parameter values.
    Parameter entries whose perturbation moves any abs/floor/hinge argument
    across (or to within ``kink_margin`` of) its kink are skipped. The
    relative error is ``|a - n| / max(|a|, |n|, 1e-6)``, so gradients
    smaller than 1e-6 are compared on an absolute scale.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ValueError("epsilon must lie in [1e-7, 1e-4]")
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = loss_evaluator()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            rng = rng if rng is not None else np.random.default_rng(0)
            entries = rng.choice(flat.size, size=max_entries, replace=False)
        for k in entries:
            orig = flat[k]
            flat[k] = orig + epsilon
            with record_kinks() as hi_kinks:
                f_hi = loss_evaluator().item()
            flat[k] = orig - epsilon
            with record_kinks() as lo_kinks:
                f_lo = loss_evaluator().item()
            flat[k] = orig
            if _straddles(hi_kinks, lo_kinks, kink_margin):
                continue
            numeric = (f_hi - f_lo) / (2.0 * epsilon)
            a = ga.reshape(-1)[k]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, err)
    return worst


def _straddles(hi: list, lo: list, margin: float) -> bool:
    for x, y in zip(hi, lo):
        if np.any(np.sign(x) != np.sign(y)):
            return True
        if np.any(np.abs(x) < margin) or np.any(np.abs(y) < margin):
            return True
    return False
