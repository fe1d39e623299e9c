"""Reverse-mode autodiff over dense numpy tensors.

Sized for the tiny per-image networks this codec trains: a flat tape of
numpy ops, no broadcasting zoo beyond what the networks need, no
higher-order gradients. All forward math bottoms out in the ``np_*``
helpers below, which the inference-only paths call directly on raw
arrays, so a no-grad forward and a decoder forward are bitwise identical.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .errors import ContractViolation

_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True


def dtype():
    return _DTYPE


def set_dtype(dt):
    """Set the project-wide real dtype. float32 by default; gradient-check
    tests switch to float64 to keep finite differences out of the noise."""
    global _DTYPE
    _DTYPE = np.dtype(dt)


class using_dtype:
    def __init__(self, dt):
        self._dt = np.dtype(dt)

    def __enter__(self):
        self._saved = _DTYPE
        set_dtype(self._dt)
        return self

    def __exit__(self, *exc):
        set_dtype(self._saved)
        return False


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._saved = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._saved
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data.reshape(()))

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)


def _node(data, parents, vjp):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    rec = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = rec
    out._parents = tuple(parents) if rec else ()
    out._vjp = vjp if rec else None
    return out


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    if isinstance(x, Parameter):
        return x.t
    return Tensor(x)


def constant(x):
    return Tensor(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _node(a.data + b.data, (a, b), None)
    if out.requires_grad:
        out._vjp = lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))
    return out


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _node(a.data - b.data, (a, b), None)
    if out.requires_grad:
        out._vjp = lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape))
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _node(a.data * b.data, (a, b), None)
    if out.requires_grad:
        ad, bd = a.data, b.data
        out._vjp = lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))
    return out


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _node(a.data / b.data, (a, b), None)
    if out.requires_grad:
        ad, bd = a.data, b.data
        out._vjp = lambda g: (
            _unbroadcast(g / bd, ad.shape),
            _unbroadcast(-g * ad / (bd * bd), bd.shape),
        )
    return out


def neg(a):
    a = as_tensor(a)
    out = _node(-a.data, (a,), None)
    if out.requires_grad:
        out._vjp = lambda g: (-g,)
    return out


def relu(a):
    a = as_tensor(a)
    out = _node(np.maximum(a.data, 0), (a,), None)
    if out.requires_grad:
        mask = a.data > 0
        out._vjp = lambda g: (g * mask,)
    return out


def exp(a):
    a = as_tensor(a)
    e = np.exp(a.data)
    out = _node(e, (a,), None)
    if out.requires_grad:
        out._vjp = lambda g: (g * e,)
    return out


def log(a):
    a = as_tensor(a)
    out = _node(np.log(a.data), (a,), None)
    if out.requires_grad:
        ad = a.data
        out._vjp = lambda g: (g / ad,)
    return out


def abs_(a):
    a = as_tensor(a)
    out = _node(np.abs(a.data), (a,), None)
    if out.requires_grad:
        s = np.sign(a.data)
        out._vjp = lambda g: (g * s,)
    return out


def clamp(a, lo, hi):
    a = as_tensor(a)
    out = _node(np.clip(a.data, lo, hi), (a,), None)
    if out.requires_grad:
        mask = (a.data >= lo) & (a.data <= hi)
        out._vjp = lambda g: (g * mask,)
    return out


def round_ste(a):
    """Round half away from zero in the forward pass, identity gradient."""
    a = as_tensor(a)
    out = _node(np_round_half_away(a.data), (a,), None)
    if out.requires_grad:
        out._vjp = lambda g: (g,)
    return out


# ---------------------------------------------------------------------------
# shape plumbing

def reshape(a, shape):
    a = as_tensor(a)
    old = a.data.shape
    out = _node(a.data.reshape(shape), (a,), None)
    if out.requires_grad:
        out._vjp = lambda g: (g.reshape(old),)
    return out


def permute(a, axes):
    a = as_tensor(a)
    inv = tuple(np.argsort(axes))
    out = _node(np.ascontiguousarray(a.data.transpose(axes)), (a,), None)
    if out.requires_grad:
        out._vjp = lambda g: (g.transpose(inv),)
    return out


def concat(xs, axis=0):
    xs = [as_tensor(x) for x in xs]
    base = xs[0].data.shape
    for x in xs[1:]:
        if len(x.data.shape) != len(base) or any(
            i != axis and x.data.shape[i] != base[i] for i in range(len(base))
        ):
            raise ContractViolation("concat inputs disagree off the concat axis")
    out = _node(np.concatenate([x.data for x in xs], axis=axis), tuple(xs), None)
    if out.requires_grad:
        sizes = [x.data.shape[axis] for x in xs]
        splits = np.cumsum(sizes)[:-1]
        out._vjp = lambda g: tuple(np.split(g, splits, axis=axis))
    return out


def concat_channels(xs):
    """Stack (C,H,W) tensors along the channel axis."""
    return concat(xs, axis=0)


def narrow(a, axis, start, length):
    a = as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = _node(np.ascontiguousarray(a.data[idx]), (a,), None)
    if out.requires_grad:
        shape = a.data.shape

        def vjp(g):
            full = np.zeros(shape, dtype=g.dtype)
            full[idx] = g
            return (full,)

        out._vjp = vjp
    return out


def split_channels(a, sizes):
    """Inverse of concat_channels; returns one tensor per requested size."""
    a = as_tensor(a)
    if sum(sizes) != a.data.shape[0]:
        raise ContractViolation("split sizes do not cover the channel axis")
    outs, start = [], 0
    for s in sizes:
        outs.append(narrow(a, 0, start, s))
        start += s
    return outs


def pad2d(a, pads):
    """Zero-pad the last two axes by (top, bottom, left, right)."""
    a = as_tensor(a)
    pt, pb, pl, pr = pads
    width = [(0, 0)] * (a.data.ndim - 2) + [(pt, pb), (pl, pr)]
    out = _node(np.pad(a.data, width), (a,), None)
    if out.requires_grad:
        h, w = a.data.shape[-2:]

        def vjp(g):
            return (g[..., pt:pt + h, pl:pl + w],)

        out._vjp = vjp
    return out


def crop2d(a, top, left, h, w):
    a = as_tensor(a)
    out = _node(np.ascontiguousarray(a.data[..., top:top + h, left:left + w]), (a,), None)
    if out.requires_grad:
        shape = a.data.shape

        def vjp(g):
            full = np.zeros(shape, dtype=g.dtype)
            full[..., top:top + h, left:left + w] = g
            return (full,)

        out._vjp = vjp
    return out


# ---------------------------------------------------------------------------
# reductions / losses

def sum_(a):
    a = as_tensor(a)
    out = _node(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), None)
    if out.requires_grad:
        shape = a.data.shape
        out._vjp = lambda g: (np.broadcast_to(g, shape).copy(),)
    return out


def mean_(a):
    a = as_tensor(a)
    n = a.data.size
    out = _node(np.asarray(a.data.mean(), dtype=a.data.dtype), (a,), None)
    if out.requires_grad:
        shape = a.data.shape
        out._vjp = lambda g: (np.broadcast_to(g / n, shape).copy(),)
    return out


def mse(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ContractViolation("mse inputs must share a shape")
    d = a.data - b.data
    out = _node(np.asarray(np.mean(d * d), dtype=a.data.dtype), (a, b), None)
    if out.requires_grad:
        n = d.size
        out._vjp = lambda g: (g * 2.0 * d / n, -g * 2.0 * d / n)
    return out


# ---------------------------------------------------------------------------
# dense / conv primitives (forward math shared with inference paths)

def np_round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def np_linear(x, w, b=None):
    y = x @ w.T
    if b is not None:
        y = y + b
    return y


def _pad_same(x, k):
    p = k // 2
    width = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    return np.pad(x, width)


def _windows(xp, k):
    # view (..., H, W, k, k) over a padded array
    from numpy.lib.stride_tricks import sliding_window_view

    return sliding_window_view(xp, (k, k), axis=(-2, -1))


def np_conv2d(x, w):
    """'same' zero-padded conv; x (Cin,H,W), w (Cout,Cin,k,k)."""
    k = w.shape[-1]
    win = _windows(_pad_same(x, k), k)  # (Cin,H,W,k,k)
    return np.einsum("ihwkl,oikl->ohw", win, w, optimize=True).astype(x.dtype, copy=False)


def np_depthwise_conv2d(x, w):
    """'same' per-channel conv; x (C,H,W), w (C,k,k)."""
    k = w.shape[-1]
    win = _windows(_pad_same(x, k), k)
    return np.einsum("chwkl,ckl->chw", win, w, optimize=True).astype(x.dtype, copy=False)


def np_channel_mix(x, m):
    """1x1 conv; x (C,H,W), m (Cout,C)."""
    c, h, w = x.shape
    return (m @ x.reshape(c, h * w)).reshape(m.shape[0], h, w)


def np_transposed_conv2d(x, w, stride=2, out_hw=None):
    """Fractionally-strided conv; x (Cin,H,W), w (Cin,Cout,k,k).

    The full output has extent stride*(H-1)+k; it is center-cropped to
    ``out_hw`` (default exactly (stride*H, stride*W)).
    """
    cin, h, wdt = x.shape
    k = w.shape[-1]
    cout = w.shape[1]
    fh, fw = stride * (h - 1) + k, stride * (wdt - 1) + k
    full = np.zeros((cout, fh, fw), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            # (Cin,Cout) taps folded over all input pixels at once
            contrib = np.tensordot(w[:, :, ki, kj], x, axes=([0], [0]))
            full[:, ki:ki + stride * h:stride, kj:kj + stride * wdt:stride] += contrib
    oh, ow = (stride * h, stride * wdt) if out_hw is None else out_hw
    if oh > fh or ow > fw:
        raise ContractViolation("transposed conv cannot grow beyond its full extent")
    top, left = (fh - oh) // 2, (fw - ow) // 2
    return np.ascontiguousarray(full[:, top:top + oh, left:left + ow])


def linear(x, w, b=None):
    """y = x @ w.T + b with x (N,Cin), w (Cout,Cin), b (Cout)."""
    x, w = as_tensor(x), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ContractViolation(
            f"linear shapes disagree: x{x.data.shape} w{w.data.shape}"
        )
    parents = (x, w) if b is None else (x, w, b)
    y = np_linear(x.data, w.data, None if b is None else b.data)
    out = _node(y, parents, None)
    if out.requires_grad:
        xd, wd = x.data, w.data

        def vjp(g):
            gx = g @ wd
            gw = g.T @ xd
            if b is None:
                return (gx, gw)
            return (gx, gw, g.sum(axis=0))

        out._vjp = vjp
    return out


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _node(a.data @ b.data, (a, b), None)
    if out.requires_grad:
        ad, bd = a.data, b.data
        out._vjp = lambda g: (g @ bd.T, ad.T @ g)
    return out


def conv2d(x, w):
    """'same' zero-padded convolution, x (Cin,H,W), w (Cout,Cin,k,k), odd k."""
    x, w = as_tensor(x), as_tensor(w)
    k = w.data.shape[-1]
    if k % 2 == 0:
        raise ContractViolation("conv2d requires an odd kernel for 'same' output")
    if x.data.shape[0] != w.data.shape[1]:
        raise ContractViolation("conv2d channel mismatch")
    out = _node(np_conv2d(x.data, w.data), (x, w), None)
    if out.requires_grad:
        xd, wd = x.data, w.data
        p = k // 2

        def vjp(g):
            cin, h, wdt = xd.shape
            dxp = np.zeros((cin, h + 2 * p, wdt + 2 * p), dtype=g.dtype)
            for ki in range(k):
                for kj in range(k):
                    dxp[:, ki:ki + h, kj:kj + wdt] += np.tensordot(
                        wd[:, :, ki, kj], g, axes=([0], [0])
                    )
            dx = dxp[:, p:p + h, p:p + wdt]
            win = _windows(_pad_same(xd, k), k)
            dw = np.einsum("ihwkl,ohw->oikl", win, g, optimize=True)
            return (dx, dw)

        out._vjp = vjp
    return out


def depthwise_conv2d(x, w):
    x, w = as_tensor(x), as_tensor(w)
    k = w.data.shape[-1]
    if k % 2 == 0:
        raise ContractViolation("depthwise conv requires an odd kernel")
    if x.data.shape[0] != w.data.shape[0]:
        raise ContractViolation("depthwise conv channel mismatch")
    out = _node(np_depthwise_conv2d(x.data, w.data), (x, w), None)
    if out.requires_grad:
        xd, wd = x.data, w.data
        p = k // 2

        def vjp(g):
            c, h, wdt = xd.shape
            dxp = np.zeros((c, h + 2 * p, wdt + 2 * p), dtype=g.dtype)
            for ki in range(k):
                for kj in range(k):
                    dxp[:, ki:ki + h, kj:kj + wdt] += g * wd[:, ki, kj][:, None, None]
            dx = dxp[:, p:p + h, p:p + wdt]
            win = _windows(_pad_same(xd, k), k)
            dw = np.einsum("chwkl,chw->ckl", win, g, optimize=True)
            return (dx, dw)

        out._vjp = vjp
    return out


def channel_mix(x, m):
    """1x1 convolution: x (C,H,W), m (Cout,C)."""
    x, m = as_tensor(x), as_tensor(m)
    if x.data.shape[0] != m.data.shape[1]:
        raise ContractViolation("channel_mix shape mismatch")
    out = _node(np_channel_mix(x.data, m.data), (x, m), None)
    if out.requires_grad:
        xd, md = x.data, m.data

        def vjp(g):
            c, h, w = xd.shape
            g2 = g.reshape(md.shape[0], h * w)
            dx = (md.T @ g2).reshape(c, h, w)
            dm = g2 @ xd.reshape(c, h * w).T
            return (dx, dm)

        out._vjp = vjp
    return out


def separable_conv2d(x, depthwise, pointwise):
    """Per-channel kxk conv followed by 1x1 channel mixing, 'same' output."""
    return channel_mix(depthwise_conv2d(x, depthwise), pointwise)


def transposed_conv2d(x, w, stride=2, out_hw=None):
    """Fractionally-strided conv, center-cropped to out_hw (default 2H,2W)."""
    x, w = as_tensor(x), as_tensor(w)
    k = w.data.shape[-1]
    if k < stride:
        raise ContractViolation("transposed conv kernel must cover the stride")
    if x.data.shape[0] != w.data.shape[0]:
        raise ContractViolation("transposed conv channel mismatch")
    cin, h, wdt = x.data.shape
    oh, ow = (stride * h, stride * wdt) if out_hw is None else out_hw
    out = _node(np_transposed_conv2d(x.data, w.data, stride, (oh, ow)), (x, w), None)
    if out.requires_grad:
        xd, wd = x.data, w.data
        fh, fw = stride * (h - 1) + k, stride * (wdt - 1) + k
        top, left = (fh - oh) // 2, (fw - ow) // 2

        def vjp(g):
            cout = wd.shape[1]
            dfull = np.zeros((cout, fh, fw), dtype=g.dtype)
            dfull[:, top:top + oh, left:left + ow] = g
            dx = np.zeros_like(xd, dtype=g.dtype)
            dw = np.zeros_like(wd, dtype=g.dtype)
            for ki in range(k):
                for kj in range(k):
                    sl = dfull[:, ki:ki + stride * h:stride, kj:kj + stride * wdt:stride]
                    dx += np.tensordot(wd[:, :, ki, kj], sl, axes=([1], [0]))
                    dw[:, :, ki, kj] = np.tensordot(xd, sl, axes=([1, 2], [1, 2]))
            return (dx, dw)

        out._vjp = vjp
    return out


def to_rows(x):
    """(C,H,W) -> (H*W, C) pixel-major rows."""
    x = as_tensor(x)
    c = x.data.shape[0]
    return reshape(permute(x, (1, 2, 0)), (-1, c))


def to_grid(x, h, w):
    """(H*W, C) -> (C,H,W)."""
    x = as_tensor(x)
    c = x.data.shape[1]
    return permute(reshape(x, (h, w, c)), (2, 0, 1))


# ---------------------------------------------------------------------------
# parameters / optimizer

PARAM_GROUPS = ("entropy", "upsampler", "synthesis", "latent")


class Parameter:
    """A trainable tensor plus its Adam state."""

    def __init__(self, data, group):
        if group not in PARAM_GROUPS:
            raise ContractViolation(f"unknown parameter group {group!r}")
        self.t = Tensor(np.array(data, dtype=_DTYPE), requires_grad=True)
        self.group = group
        self.m = np.zeros_like(self.t.data)
        self.v = np.zeros_like(self.t.data)
        self.step = 0

    @property
    def data(self):
        return self.t.data

    @data.setter
    def data(self, value):
        self.t.data = np.asarray(value, dtype=self.t.data.dtype)

    @property
    def grad(self):
        return self.t.grad

    def zero_grad(self):
        self.t.grad = None

    def __repr__(self):
        return f"Parameter(shape={self.t.data.shape}, group={self.group!r})"


def backward(loss):
    """Populate grads of everything reachable from a scalar loss.

    Repeated calls without clearing grads accumulate.
    """
    loss = as_tensor(loss)
    if loss.data.size != 1:
        raise ContractViolation("backward requires a scalar loss")
    topo, seen, stack = [], set(), [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for p, g in zip(node._parents, grads):
            if g is None or not p.requires_grad:
                continue
            g = np.asarray(g, dtype=p.data.dtype)
            if p.grad is None:
                p.grad = g.copy() if g.base is not None else g
            else:
                p.grad = p.grad + g


def adam_step(params, lr, betas=(0.9, 0.999), eps=1e-8):
    """Bias-corrected Adam on every parameter; grads are consumed."""
    params = list(params)
    if params and all(p.t.grad is None for p in params):
        raise ContractViolation("adam_step before any backward: grads missing")
    b1, b2 = betas
    for p in params:
        g = p.t.grad
        if g is None:
            g = np.zeros_like(p.t.data)
        p.step += 1
        p.m = b1 * p.m + (1 - b1) * g
        p.v = b2 * p.v + (1 - b2) * (g * g)
        mhat = p.m / (1 - b1 ** p.step)
        vhat = p.v / (1 - b2 ** p.step)
        p.t.data = p.t.data - lr * mhat / (np.sqrt(vhat) + eps)
        p.t.grad = None


def he_uniform(shape, fan_in, rng):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(_DTYPE)
