"""Layers, the Adam optimiser and weight (de)serialisation."""

from __future__ import annotations

import csv
from collections import OrderedDict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Holds parameters and sub-modules in registration order."""

    def __init__(self):
        self._params = OrderedDict()
        self._mods = OrderedDict()
        self.training = True

    def param(self, name, value):
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def child(self, name, mod):
        self._mods[name] = mod
        return mod

    def named_parameters(self, prefix=""):
        out = OrderedDict()
        for k, v in self._params.items():
            out[prefix + k] = v
        for k, m in self._mods.items():
            out.update(m.named_parameters(prefix + k + "."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def train(self, flag=True):
        self.training = flag
        for m in self._mods.values():
            m.train(flag)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state(self):
        return OrderedDict((k, v.data.copy()) for k, v in self.named_parameters().items())

    def load_state(self, state):
        named = self.named_parameters()
        for k, arr in state.items():
            if k not in named:
                raise KeyError(f"unknown parameter {k}")
            if named[k].data.shape != np.shape(arr):
                raise ad.ShapeError(f"{k}: shape {np.shape(arr)} != {named[k].data.shape}")
            named[k].data = np.array(arr, dtype=np.float64)


def _glorot(rng, fan_in, fan_out, shape):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True):
        super().__init__()
        self.weight = self.param("weight", _glorot(rng, n_in, n_out, (n_in, n_out)))
        self.bias = self.param("bias", np.zeros(n_out)) if bias else None

    def __call__(self, x):
        return ad.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, rng, k=3):
        super().__init__()
        fan_in = c_in * k * k
        self.weight = self.param("weight", rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                                      (c_out, c_in, k, k)))
        self.bias = self.param("bias", np.zeros(c_out))
        self.pad = k // 2

    def __call__(self, x):
        return ad.conv2d(x, self.weight, self.bias, self.pad)


class LayerNorm(Module):
    def __init__(self, d):
        super().__init__()
        self.gamma = self.param("gamma", np.ones(d))
        self.beta = self.param("beta", np.zeros(d))

    def __call__(self, x):
        return ad.layernorm(x, self.gamma, self.beta)


class SelfAttention(Module):
    def __init__(self, d, heads, rng):
        super().__init__()
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = self.child("qkv", Linear(d, 3 * d, rng))
        self.out = self.child("out", Linear(d, d, rng))

    def __call__(self, x):
        b, t, d = x.shape
        h = self.heads
        qkv = ad.reshape(self.qkv(x), (b, t, 3 * h, d // h))
        qkv = ad.transpose(qkv, (0, 2, 1, 3))                   # (b, 3h, t, dk)
        q = ad.getitem(qkv, (slice(None), slice(0, h)))
        k = ad.getitem(qkv, (slice(None), slice(h, 2 * h)))
        v = ad.getitem(qkv, (slice(None), slice(2 * h, 3 * h)))
        y = ad.attention(q, k, v)                               # (b, h, t, dk)
        y = ad.reshape(ad.transpose(y, (0, 2, 1, 3)), (b, t, d))
        return self.out(y)


class EncoderLayer(Module):
    """Pre-norm transformer encoder block."""

    def __init__(self, d, heads, rng, dropout=0.1, ff_mult=2):
        super().__init__()
        self.rng = rng
        self.p = dropout
        self.ln1 = self.child("ln1", LayerNorm(d))
        self.attn = self.child("attn", SelfAttention(d, heads, rng))
        self.ln2 = self.child("ln2", LayerNorm(d))
        self.ff1 = self.child("ff1", Linear(d, ff_mult * d, rng))
        self.ff2 = self.child("ff2", Linear(ff_mult * d, d, rng))

    def __call__(self, x):
        x = x + ad.dropout(self.attn(self.ln1(x)), self.p, self.rng, self.training)
        h = self.ff2(ad.relu(self.ff1(self.ln2(x))))
        return x + ad.dropout(h, self.p, self.rng, self.training)


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad + self.wd * p.data if self.wd else p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def save_weights(module_or_state, blob_path, index_path):
    """Flat little-endian float64 blob plus a CSV index ``name,shape,offset``."""
    state = module_or_state.state() if isinstance(module_or_state, Module) else module_or_state
    offset = 0
    rows = []
    chunks = []
    for name, arr in state.items():
        arr = np.asarray(arr, dtype="<f8")
        rows.append([name, "x".join(str(s) for s in arr.shape) or "scalar", offset])
        chunks.append(arr.ravel())
        offset += arr.size
    flat = np.concatenate(chunks) if chunks else np.zeros(0, "<f8")
    flat.astype("<f8").tofile(blob_path)
    with open(index_path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["name", "shape", "offset"])
        wr.writerows(rows)


def load_weights(blob_path, index_path):
    flat = np.fromfile(blob_path, dtype="<f8")
    state = OrderedDict()
    with open(index_path, newline="") as fh:
        rd = csv.reader(fh)
        next(rd)
        for name, shape, offset in rd:
            shp = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
            n = int(np.prod(shp)) if shp else 1
            o = int(offset)
            state[name] = flat[o:o + n].reshape(shp).astype(np.float64)
    return state
