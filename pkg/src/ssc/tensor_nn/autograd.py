"""Tape-based reverse-mode autodiff over float64 numpy arrays.

Just enough machinery for the residual filter networks and the
differentiable proxy codec: elementwise arithmetic, reductions,
convolutions, pixel shuffling, and the Laplace interval log-probability
used by the rate model. Single-threaded and deterministic.
"""

from __future__ import annotations

import math

import numpy as np

_LN2 = math.log(2.0)


class Tensor:
    """A dense float64 array plus an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, seed: np.ndarray | None = None):
        """Accumulate gradients of this (scalar) tensor into the graph leaves."""
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(seed, dtype=np.float64)}
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
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar -------------------------------------------------------
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
        return mul(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    return _node(out_data, (a,), lambda g: (g * out_data,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _node(np.abs(a.data), (a,), lambda g: (g * sign,))


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clamp with the true subgradient: zero outside (lo, hi)."""
    a = as_tensor(a)
    inside = ((a.data > lo) & (a.data < hi)).astype(np.float64)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def clamp_min(a, lo: float) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > lo).astype(np.float64)
    return _node(np.maximum(a.data, lo), (a,), lambda g: (g * mask,))


def round_ste(a) -> Tensor:
    """Round to nearest integer; straight-through (identity) gradient."""
    a = as_tensor(a)
    return _node(np.round(a.data), (a,), lambda g: (g,))


def silu(a) -> Tensor:
    a = as_tensor(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    return _node(a.data * sig, (a,), lambda g: (g * sig * (1.0 + a.data * (1.0 - sig)),))


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[i] for i in np.atleast_1d(axis)]
    )

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.data.shape).copy(),)

    return _node(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)


# ---------------------------------------------------------------------------
# spatial ops on (B, C, H, W) tensors
# ---------------------------------------------------------------------------


def _windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Sliding (B, C, OH, OW, k, k) view over a padded array."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(x, w, b, stride: int = 1) -> Tensor:
    """Cross-correlation with same-padding floor(k/2); output dims ceil(H/stride)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    cout, cin, k, _ = w.data.shape
    if x.data.ndim != 4 or x.data.shape[1] != cin:
        raise ValueError(
            f"conv2d shape mismatch: input {x.data.shape}, weights {w.data.shape}"
        )
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = _windows(xp, k, stride)
    out = np.einsum("bcxykl,ockl->boxy", win, w.data, optimize=True) + b.data[
        None, :, None, None
    ]

    def backward(g):
        gw = np.einsum("bcxykl,boxy->ockl", win, g, optimize=True)
        gb = g.sum(axis=(0, 2, 3))
        oh, ow = g.shape[2], g.shape[3]
        gxp = np.zeros_like(xp)
        for ki in range(k):
            for kj in range(k):
                t = np.einsum("boxy,oc->bcxy", g, w.data[:, :, ki, kj], optimize=True)
                gxp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += t
        gx = gxp[:, :, pad : pad + x.data.shape[2], pad : pad + x.data.shape[3]] if pad else gxp
        return gx, gw, gb

    return _node(out, (x, w, b), backward)


def depthwise_conv2d(x, w, b) -> Tensor:
    """Per-channel 2D cross-correlation (groups = channels), stride 1."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    c, one, k, _ = w.data.shape
    if one != 1 or x.data.shape[1] != c:
        raise ValueError(
            f"depthwise shape mismatch: input {x.data.shape}, weights {w.data.shape}"
        )
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = _windows(xp, k, 1)
    out = np.einsum("bcxykl,ckl->bcxy", win, w.data[:, 0], optimize=True) + b.data[
        None, :, None, None
    ]

    def backward(g):
        gw = np.einsum("bcxykl,bcxy->ckl", win, g, optimize=True)[:, None]
        gb = g.sum(axis=(0, 2, 3))
        oh, ow = g.shape[2], g.shape[3]
        gxp = np.zeros_like(xp)
        for ki in range(k):
            for kj in range(k):
                gxp[:, :, ki : ki + oh, kj : kj + ow] += g * w.data[None, :, 0, ki, kj, None, None]
        gx = gxp[:, :, pad : pad + x.data.shape[2], pad : pad + x.data.shape[3]] if pad else gxp
        return gx, gw, gb

    return _node(out, (x, w, b), backward)


def _shuffle(data: np.ndarray, r: int) -> np.ndarray:
    bsz, c, h, w = data.shape
    out = data.reshape(bsz, c // (r * r), r, r, h, w)
    return out.transpose(0, 1, 4, 2, 5, 3).reshape(bsz, c // (r * r), h * r, w * r)


def _unshuffle(data: np.ndarray, r: int) -> np.ndarray:
    bsz, c, h, w = data.shape
    out = data.reshape(bsz, c, h // r, r, w // r, r)
    return out.transpose(0, 1, 3, 5, 2, 4).reshape(bsz, c * r * r, h // r, w // r)


def pixel_shuffle(x, r: int) -> Tensor:
    """(B, C*r^2, H, W) -> (B, C, H*r, W*r) sub-pixel rearrangement."""
    x = as_tensor(x)
    if x.data.shape[1] % (r * r) != 0:
        raise ValueError(f"channels {x.data.shape[1]} not divisible by r^2={r * r}")
    return _node(_shuffle(x.data, r), (x,), lambda g: (_unshuffle(g, r),))


def pixel_unshuffle(x, r: int) -> Tensor:
    x = as_tensor(x)
    if x.data.shape[2] % r or x.data.shape[3] % r:
        raise ValueError("spatial dims not divisible by r")
    return _node(_unshuffle(x.data, r), (x,), lambda g: (_shuffle(g, r),))


def reflect_pad2d(x, pads: tuple[int, int, int, int]) -> Tensor:
    """Reflect-pad (top, bottom, left, right) on the spatial axes."""
    x = as_tensor(x)
    top, bottom, left, right = pads
    if top == bottom == left == right == 0:
        return x
    data = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)), mode="reflect")
    h, w = x.data.shape[2], x.data.shape[3]

    def backward(g):
        gx = g[:, :, top : top + h, left : left + w].copy()
        # fold reflected borders back onto their sources
        if top:
            gx[:, :, 1 : 1 + top] += g[:, :, :top][:, :, ::-1, :]
        if bottom:
            gx[:, :, h - 1 - bottom : h - 1] += g[:, :, top + h :][:, :, ::-1, :]
        if left:
            gx[:, :, :, 1 : 1 + left] += g[:, :, :, :left][:, :, :, ::-1]
        if right:
            gx[:, :, :, w - 1 - right : w - 1] += g[:, :, :, left + w :][:, :, :, ::-1]
        return (gx,)

    return _node(data, (x,), backward)


def crop2d(x, h: int, w: int) -> Tensor:
    """Keep the top-left h x w spatial region."""
    x = as_tensor(x)
    if x.data.shape[2] == h and x.data.shape[3] == w:
        return x

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, :, :h, :w] = g
        return (gx,)

    return _node(x.data[:, :, :h, :w].copy(), (x,), backward)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.data.shape),))


def color_mix(x, m: np.ndarray) -> Tensor:
    """Apply a constant 3x3 color matrix across the channel axis."""
    x = as_tensor(x)
    m = np.asarray(m, dtype=np.float64)
    out = np.einsum("oc,bchw->bohw", m, x.data, optimize=True)
    return _node(out, (x,), lambda g: (np.einsum("oc,bohw->bchw", m, g, optimize=True),))


def block8_transform(x, a: np.ndarray) -> Tensor:
    """Apply Y = A X A^T on every 8x8 spatial block of (B, C, H, W)."""
    x = as_tensor(x)
    bsz, c, h, w = x.data.shape
    if h % 8 or w % 8:
        raise ValueError("spatial dims must be multiples of 8")
    a = np.asarray(a, dtype=np.float64)

    def apply(data, m):
        blocks = data.reshape(bsz, c, h // 8, 8, w // 8, 8)
        out = np.einsum("uj,bchjwk,vk->bchuwv", m, blocks, m, optimize=True)
        return out.reshape(bsz, c, h, w)

    return _node(apply(x.data, a), (x,), lambda g: (apply(g, a.T),))


def laplace_interval_logp(z, b) -> Tensor:
    """log P(z - 1/2 <= Z <= z + 1/2) for Z ~ Laplace(0, b), elementwise.

    z is the noisy symbol minus the band location; b broadcasts against z.
    Exact in the tails (computed in log space on the one-sided branches).
    """
    z, b = as_tensor(z), as_tensor(b)
    zd, bd = np.broadcast_arrays(z.data, b.data)
    lo = zd - 0.5
    hi = zd + 0.5
    pos = lo >= 0.0
    neg = hi <= 0.0
    mid = ~(pos | neg)

    em1b = np.exp(-1.0 / bd)
    log_gap = np.log1p(-em1b) - _LN2

    logp = np.empty_like(zd)
    dlogp_dz = np.empty_like(zd)
    dlogp_db = np.empty_like(zd)

    # one-sided branches: p = exp(-|far edge|/b) * (1 - e^(-1/b)) / 2
    tail_db_common = -em1b / ((1.0 - em1b) * bd * bd)
    logp[pos] = (-lo / bd + log_gap)[pos]
    dlogp_dz[pos] = (-1.0 / bd)[pos]
    dlogp_db[pos] = (lo / (bd * bd) + tail_db_common)[pos]

    logp[neg] = (hi / bd + log_gap)[neg]
    dlogp_dz[neg] = (1.0 / bd)[neg]
    dlogp_db[neg] = (-hi / (bd * bd) + tail_db_common)[neg]

    # straddling zero: p = 1 - (e^(-hi/b) + e^(lo/b)) / 2
    e_hi = np.exp(-hi / bd)
    e_lo = np.exp(lo / bd)
    p_mid = 1.0 - 0.5 * (e_hi + e_lo)
    logp[mid] = np.log(p_mid[mid])
    dlogp_dz[mid] = (0.5 / bd * (e_hi - e_lo))[mid] / p_mid[mid]
    dlogp_db[mid] = (0.5 / (bd * bd) * (lo * e_lo - hi * e_hi))[mid] / p_mid[mid]

    def backward(g):
        return (
            _unbroadcast(g * dlogp_dz, z.data.shape),
            _unbroadcast(g * dlogp_db, b.data.shape),
        )

    return _node(logp, (z, b), backward)
