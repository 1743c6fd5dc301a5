"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Each op builds a :class:`Tensor` that remembers its parents and a closure
that pushes the output gradient back to them. ``backward()`` walks the graph
in reverse topological order.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 4:
            raise ShapeError(f"tensors have at most 4 axes, got shape {self.data.shape}")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._parents:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is not None:
                for p, pg in zip(node._parents, node._backward(g)):
                    if pg is None:
                        continue
                    if pg.shape != p.data.shape:
                        pg = _unbroadcast(pg, p.data.shape)
                    grads[id(p)] = grads[id(p)] + pg if id(p) in grads else pg

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs(*ts):
    return any(t.requires_grad or t._parents for t in ts)


def _node(data, parents, backward):
    parents = tuple(parents)
    if not _needs(*parents):
        return Tensor(data)
    return Tensor(data, _parents=parents, _backward=backward)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ------------------------------------------------------------ elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def relu(x):
    x = as_tensor(x)
    m = x.data > 0
    return _node(x.data * m, (x,), lambda g: (g * m,))


def sigmoid(x):
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return _node(s, (x,), lambda g: (g * s * (1.0 - s),))


def softplus(x):
    x = as_tensor(x)
    return _node(np.logaddexp(0.0, x.data), (x,), lambda g: (g * _sigmoid(x.data),))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def where(mask, a, b):
    """Select ``a`` where ``mask`` else ``b`` (mask is a constant boolean array)."""
    a, b = as_tensor(a), as_tensor(b)
    m = np.asarray(mask, dtype=bool)
    return _node(np.where(m, a.data, b.data), (a, b),
                 lambda g: (np.where(m, g, 0.0), np.where(m, 0.0, g)))


def dropout(x, p, rng=None, training=True):
    """Inverted dropout; identity when not training or ``p == 0``."""
    x = as_tensor(x)
    if not training or p <= 0.0:
        return x
    if not (0.0 <= p < 1.0):
        raise ValueError("dropout rate must lie in [0, 1)")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _node(x.data * keep, (x,), lambda g: (g * keep,))


# ------------------------------------------------------------- reductions

def total(x):
    x = as_tensor(x)
    return _node(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x):
    x = as_tensor(x)
    n = x.data.size
    return _node(np.array(x.data.mean()), (x,),
                 lambda g: (np.broadcast_to(g / n, x.shape).copy(),))


# ----------------------------------------------------------------- shapes

def reshape(x, shape):
    x = as_tensor(x)
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def concat(tensors, axis):
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from exc
    return _node(data, ts, lambda g: tuple(np.split(g, cuts, axis=axis)))


def getitem(x, index):
    x = as_tensor(x)

    def back(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return _node(x.data[index], (x,), back)


# ------------------------------------------------------------------ layers

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not align")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _node(a.data @ b.data, (a, b), back)


def linear(x, weight, bias=None):
    """Affine map on the last axis: ``x @ weight + bias`` with weight ``(in, out)``."""
    x, w = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    y = matmul(x, w)
    return y if bias is None else add(y, bias)


def conv2d(x, weight, bias=None, padding=1):
    """2-D cross-correlation, stride 1. ``x`` (N, C, H, W), ``weight`` (O, C, kh, kw)."""
    x, w = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {w.shape}")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    ho, wo = h + 2 * p - kh + 1, wd + 2 * p - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than padded input {xp.shape}")
    cols = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    # cols: (n, c, ho, wo, kh, kw)
    out = np.einsum("nchwij,ocij->nohw", cols, w.data, optimize=True)
    if bias is not None:
        out = out + as_tensor(bias).data.reshape(1, o, 1, 1)

    def back(g):
        gw = np.einsum("nohw,nchwij->ocij", g, cols, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + ho, j:j + wo] += np.einsum("nohw,oc->nchw", g, w.data[:, :, i, j],
                                                           optimize=True)
        gx = gxp[:, :, p:p + h, p:p + wd] if p else gxp
        res = [gx, gw]
        if bias is not None:
            res.append(g.sum(axis=(0, 2, 3)).reshape(as_tensor(bias).shape))
        return tuple(res)

    parents = (x, w) if bias is None else (x, w, as_tensor(bias))
    return _node(out, parents, back)


def maxpool2(x):
    """2x2 max pooling, stride 2 (trailing odd row/column dropped)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"maxpool2: expected (N, C, H, W), got {x.shape}")
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise ShapeError(f"maxpool2: input {x.shape} too small")
    blk = x.data[:, :, : 2 * h2, : 2 * w2].reshape(n, c, h2, 2, w2, 2)
    blk = blk.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    arg = blk.argmax(axis=-1)
    out = np.take_along_axis(blk, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros((n, c, h2, w2, 4))
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
        gx = np.zeros_like(x.data)
        gx[:, :, : 2 * h2, : 2 * w2] = gb
        return (gx,)

    return _node(out, (x,), back)


def layernorm(x, gamma, beta, eps=1e-5):
    x, ga, be = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if ga.shape != (x.shape[-1],) or be.shape != (x.shape[-1],):
        raise ShapeError(f"layernorm: gamma/beta {ga.shape}/{be.shape} vs input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    out = xh * ga.data + be.data

    def back(g):
        d = x.shape[-1]
        gxh = g * ga.data
        gx = inv / d * (d * gxh - gxh.sum(axis=-1, keepdims=True)
                        - xh * (gxh * xh).sum(axis=-1, keepdims=True))
        axes = tuple(range(g.ndim - 1))
        return gx, (g * xh).sum(axis=axes), g.sum(axis=axes)

    return _node(out, (x, ga, be), back)


def softmax_np(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attention(q, k, v, return_weights=False):
    """Scaled dot-product attention over the second-to-last axis.

    ``q, k, v`` share shape ``(..., T, d)``; weights ``(..., T, T)`` sum to 1 per query.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape != k.shape or k.shape[:-1] != v.shape[:-1]:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    scale = 1.0 / np.sqrt(q.shape[-1])
    s = (q.data @ np.swapaxes(k.data, -1, -2)) * scale
    a = softmax_np(s)
    out = a @ v.data

    def back(g):
        ga = g @ np.swapaxes(v.data, -1, -2)
        gv = np.swapaxes(a, -1, -2) @ g
        gs = a * (ga - (ga * a).sum(axis=-1, keepdims=True)) * scale
        gq = gs @ k.data
        gk = np.swapaxes(gs, -1, -2) @ q.data
        return gq, gk, gv

    node = _node(out, (q, k, v), back)
    return (node, a) if return_weights else node


# ------------------------------------------------------------------ losses

def bce_with_logits(logits, targets):
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 targets."""
    z = as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != z.shape:
        raise ShapeError(f"bce: logits {z.shape} vs targets {y.shape}")
    loss = np.maximum(z.data, 0) - z.data * y + np.log1p(np.exp(-np.abs(z.data)))
    n = z.data.size
    return _node(np.array(loss.mean()), (z,), lambda g: (g * (_sigmoid(z.data) - y) / n,))


def bce(probs, targets, eps=1e-12):
    """Mean binary cross-entropy on probabilities (clipped away from 0 and 1)."""
    p = as_tensor(probs)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != p.shape:
        raise ShapeError(f"bce: probs {p.shape} vs targets {y.shape}")
    pc = np.clip(p.data, eps, 1.0 - eps)
    n = p.data.size
    loss = -(y * np.log(pc) + (1 - y) * np.log(1 - pc)).mean()
    return _node(np.array(loss), (p,), lambda g: (g * (pc - y) / (pc * (1 - pc)) / n,))


def mse(pred, target, mask=None):
    """Mean squared error, optionally over the positions where ``mask`` is True."""
    p = as_tensor(pred)
    y = np.asarray(target, dtype=np.float64)
    if y.shape != p.shape:
        raise ShapeError(f"mse: prediction {p.shape} vs target {y.shape}")
    m = np.ones(p.shape) if mask is None else np.broadcast_to(np.asarray(mask, float), p.shape)
    cnt = m.sum()
    if cnt == 0:
        raise ValueError("mse: empty mask")
    d = (p.data - y) * m
    return _node(np.array((d * d).sum() / cnt), (p,), lambda g: (g * 2.0 * d / cnt,))


# --------------------------------------------------------------- checking

def numeric_grad(f, arrays, eps=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. each array (in place)."""
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = arr[i]
            arr[i] = old + eps
            fp = f()
            arr[i] = old - eps
            fm = f()
            arr[i] = old
            g[i] = (fp - fm) / (2 * eps)
        out.append(g)
    return out
