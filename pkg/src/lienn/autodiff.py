"""Reverse-mode autodiff over dense float64 arrays.

A Tensor wraps a NumPy buffer plus an optional backward closure; calling
backward() on a scalar walks the recorded graph in reverse topological
order and accumulates gradients additively into every tensor that requires
them. The op set is exactly what the layers and training loop need.
"""

from __future__ import annotations

import numpy as np

from . import kernels

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording inside its block."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward on a tensor with no recorded graph")
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operators --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not part of the op set")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    if req:
        out._parents = parents
        out._backward = backward
    return out


# -- arithmetic ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def neg(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            _accum(a, -g)

    return _make(-a.data, (a,), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def square(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        if a.requires_grad:
            _accum(a, 2.0 * a.data * g)

    return _make(a.data * a.data, (a,), backward)


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0.0

    def backward(g):
        if a.requires_grad:
            _accum(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), backward)


# -- linear algebra --------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul expects >=2-D operands, got {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(data, (a, b), backward)


def _to_rows(a: np.ndarray) -> np.ndarray:
    # (B, K, C, N) -> (B*K*N, C): one gemm regardless of the batch layout
    b, k, c, n = a.shape
    return np.ascontiguousarray(a.transpose(0, 1, 3, 2)).reshape(b * k * n, c)


def _from_rows(rows: np.ndarray, b: int, k: int, n: int) -> np.ndarray:
    return rows.reshape(b, k, n, -1).transpose(0, 1, 3, 2)


def channel_matmul(x, w) -> Tensor:
    """Contract the channel axis of a (B, K, C, N) feature with a (C, C') weight."""
    x, w = _wrap(x), _wrap(w)
    if x.ndim != 4 or w.ndim != 2 or x.shape[2] != w.shape[0]:
        raise ValueError(f"channel_matmul shape mismatch: {x.shape} x {w.shape}")
    b, k, c, n = x.shape
    x_rows = _to_rows(x.data)
    data = _from_rows(x_rows @ w.data, b, k, n)

    def backward(g):
        g_rows = _to_rows(g)
        if x.requires_grad:
            _accum(x, _from_rows(g_rows @ w.data.T, b, k, n))
        if w.requires_grad:
            _accum(w, x_rows.T @ g_rows)

    return _make(data, (x, w), backward)


def bilinear_form(x, y, gram: np.ndarray) -> Tensor:
    """Pairing B(x, y) over the K axis with a fixed gram matrix.

    x is (B, K, C, N); y is (B, K, C, N) or (B, K, 1, N) (shared direction,
    broadcast over channels). Output is (B, 1, C, N)."""
    x, y = _wrap(x), _wrap(y)
    if x.ndim != 4 or y.ndim != 4:
        raise ValueError(f"bilinear_form expects 4-D features, got {x.shape}, {y.shape}")
    gy = np.moveaxis(np.tensordot(gram, y.data, axes=([1], [1])), 0, 1)
    data = (x.data * gy).sum(axis=1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            _accum(x, _unbroadcast(g * gy, x.shape))
        if y.requires_grad:
            gx = np.moveaxis(np.tensordot(gram.T, x.data, axes=([1], [1])), 0, 1)
            _accum(y, _unbroadcast(g * gx, y.shape))

    return _make(data, (x, y), backward)


def bracket_channels(u, v, algebra) -> Tensor:
    """Coefficient-space Lie bracket [u, v] per (batch, channel, set) slice.

    Both inputs are (B, K, C, N) with K the algebra dimension."""
    u, v = _wrap(u), _wrap(v)
    if u.shape != v.shape:
        raise ValueError(f"bracket operands must match, got {u.shape} vs {v.shape}")
    if u.ndim != 4 or u.shape[1] != algebra.dim:
        raise ValueError(f"expected (B, {algebra.dim}, C, N) features, got {u.shape}")
    kern = algebra.kernel
    b, k, c, n = u.shape
    uf = np.ascontiguousarray(u.data.transpose(0, 2, 3, 1).reshape(-1, k))
    vf = np.ascontiguousarray(v.data.transpose(0, 2, 3, 1).reshape(-1, k))
    out = kernels.bracket_fwd(kern, uf, vf)
    data = out.reshape(b, c, n, k).transpose(0, 3, 1, 2)

    def backward(g):
        gf = np.ascontiguousarray(g.transpose(0, 2, 3, 1).reshape(-1, k))
        if u.requires_grad:
            gu = kernels.bracket_bwd_u(kern, vf, gf)
            _accum(u, gu.reshape(b, c, n, k).transpose(0, 3, 1, 2))
        if v.requires_grad:
            gv = kernels.bracket_bwd_v(kern, uf, gf)
            _accum(v, gv.reshape(b, c, n, k).transpose(0, 3, 1, 2))

    return _make(data, (u, v), backward)


# -- shape ops -------------------------------------------------------------


def reshape(a, *shape) -> Tensor:
    a = _wrap(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            _accum(a, g.reshape(a.shape))

    return _make(data, (a,), backward)


def broadcast_to(a, shape) -> Tensor:
    a = _wrap(a)
    data = np.ascontiguousarray(np.broadcast_to(a.data, shape))

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))

    return _make(data, (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accum(t, g[tuple(sl)])

    return _make(data, tuple(tensors), backward)


def where_pass(cond: np.ndarray, a, b) -> Tensor:
    """Select between two tensors with a frozen boolean mask.

    The mask is evaluated on forward values and treated as constant during
    backward, the standard piecewise-smooth convention."""
    a, b = _wrap(a), _wrap(b)
    cond = np.asarray(cond, dtype=bool)
    data = np.where(cond, a.data, b.data)

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.where(cond, g, 0.0), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.where(cond, 0.0, g), b.shape))

    return _make(data, (a, b), backward)


# -- reductions ------------------------------------------------------------


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape).copy())
            return
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            for ax in sorted(ax % a.ndim for ax in axes):
                g = np.expand_dims(g, ax)
        _accum(a, np.broadcast_to(g, a.shape).copy())

    return _make(data, (a,), backward)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- set ops ---------------------------------------------------------------


def argmax_set(scores: Tensor | np.ndarray, axis: int = -1) -> np.ndarray:
    """Plain argmax over an axis; ties resolve to the lowest index.

    Returns an index array, not a Tensor: the selection is non-differentiable
    and downstream gradients flow through gather_set only."""
    data = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    return np.argmax(data, axis=axis)


def gather_set(x, idx: np.ndarray) -> Tensor:
    """Select one set element per (batch, channel): (B, K, C, N) + (B, C) -> (B, K, C, 1)."""
    x = _wrap(x)
    if x.ndim != 4 or idx.shape != (x.shape[0], x.shape[2]):
        raise ValueError(f"gather_set mismatch: feature {x.shape}, index {idx.shape}")
    sel = idx[:, None, :, None]
    data = np.take_along_axis(x.data, sel, axis=3)

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, np.broadcast_to(sel, g.shape), g, axis=3)
            _accum(x, gx)

    return _make(data, (x,), backward)


# -- losses ----------------------------------------------------------------


def softmax_cross_entropy(logits, labels: np.ndarray) -> Tensor:
    """Mean cross entropy of (B, M) logits against integer labels (B,)."""
    logits = _wrap(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"bad shapes: logits {logits.shape}, labels {labels.shape}")
    b = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    data = -logp[np.arange(b), labels].mean()

    def backward(g):
        if logits.requires_grad:
            p = np.exp(logp)
            p[np.arange(b), labels] -= 1.0
            _accum(logits, (float(g) / b) * p)

    return _make(np.asarray(data), (logits,), backward)


def mse(pred, target) -> Tensor:
    """Mean squared error over all elements; target is treated as constant."""
    pred = _wrap(pred)
    diff = pred - Tensor(np.asarray(target, dtype=np.float64))
    return reduce_mean(square(diff))


# -- verification ----------------------------------------------------------


def grad_check(f, xs, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central finite differences.

    f maps the given tensors to a scalar Tensor; xs is one Tensor or a
    sequence. Error per component is |g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-12)."""
    if isinstance(xs, Tensor):
        xs = [xs]
    xs = list(xs)
    for x in xs:
        if not x.requires_grad:
            raise ValueError("grad_check inputs must require gradients")
        x.zero_grad()
    out = f(*xs)
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()
    worst = 0.0
    for x in xs:
        g_ad = np.zeros_like(x.data) if x.grad is None else x.grad
        flat = x.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(*xs).data)
            flat[i] = orig - eps
            lo = float(f(*xs).data)
            flat[i] = orig
            g_fd = (hi - lo) / (2.0 * eps)
            g = g_ad.reshape(-1)[i]
            rel = abs(g - g_fd) / (abs(g) + abs(g_fd) + 1e-12)
            worst = max(worst, rel)
    return worst
