"""Reverse-mode autodiff over a small set of dense numpy ops.

Values are numpy float arrays (float32 in production paths; every op
preserves the input dtype so gradient checks can run in float64).
Activations use channels-last layout (N, H, W, C); convolutions are
evaluated as one GEMM per kernel tap, which is the fastest layout for
BLAS on small feature maps. Gradient accumulation happens in recorded
graph order, so backward passes are bit-reproducible.
"""

from __future__ import annotations

import numpy as np

_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling graph recording (teacher/inference passes)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Var:
    """Node in the compute graph: a value plus optional backward closure."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, value, requires_grad=False, parents=(), vjp=None):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype


def leaf(value, requires_grad=False):
    return Var(np.asarray(value), requires_grad=requires_grad)


def _node(value, parents, vjp):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Var(value, requires_grad=True, parents=parents, vjp=vjp)
    return Var(value)


def backward(root):
    """Accumulate gradients of a scalar root into every reachable leaf."""
    if root.value.ndim != 0:
        raise ValueError(f"backward needs a scalar root, got shape {root.value.shape}")
    # iterative topological order over the recorded graph
    topo = []
    visited = set()
    stack = [(root, iter(root._parents))]
    visited.add(id(root))
    while stack:
        node, it = stack[-1]
        advanced = False
        for p in it:
            if id(p) not in visited and p.requires_grad:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            topo.append(node)
            stack.pop()
    root.grad = np.ones((), dtype=root.value.dtype)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g


# ---------------------------------------------------------------------------
# elementwise / reduction ops


def add(a, b):
    if a.value.shape != b.value.shape:
        raise ValueError("add: shape mismatch")
    return _node(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    if a.value.shape != b.value.shape:
        raise ValueError("sub: shape mismatch")
    return _node(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b):
    if a.value.shape != b.value.shape:
        raise ValueError("mul: shape mismatch")
    return _node(a.value * b.value, (a, b), lambda g: (g * b.value, g * a.value))


def scale(a, s):
    s = a.value.dtype.type(s)
    return _node(a.value * s, (a,), lambda g: (g * s,))


def square(a):
    return _node(a.value * a.value, (a,), lambda g: (g * (2 * a.value),))


def vsum(a):
    val = np.asarray(a.value.sum(dtype=np.float64), dtype=a.value.dtype)
    return _node(val, (a,), lambda g: (np.broadcast_to(g, a.value.shape).astype(a.value.dtype),))


def vmean(a):
    n = a.value.size
    val = np.asarray(a.value.mean(dtype=np.float64), dtype=a.value.dtype)

    def vjp(g):
        return (np.broadcast_to(g / n, a.value.shape).astype(a.value.dtype),)

    return _node(val, (a,), vjp)


def mse(a, b):
    """Fused mean((a - b)^2); the workhorse training loss."""
    if a.value.shape != b.value.shape:
        raise ValueError("mse: shape mismatch")
    diff = a.value - b.value
    n = diff.size
    val = np.asarray(np.mean(diff * diff, dtype=np.float64), dtype=a.value.dtype)

    def vjp(g):
        gd = (g * 2.0 / n) * diff
        return (gd, -gd)

    return _node(val, (a, b), vjp)


def grad_diff_loss(a, b):
    """Mean squared difference of forward-difference image gradients.

    Inputs are (N, H, W, C); both spatial axes contribute.
    """
    if a.value.shape != b.value.shape:
        raise ValueError("grad_diff_loss: shape mismatch")
    av, bv = a.value, b.value
    dh = (av[:, 1:] - av[:, :-1]) - (bv[:, 1:] - bv[:, :-1])
    dw = (av[:, :, 1:] - av[:, :, :-1]) - (bv[:, :, 1:] - bv[:, :, :-1])
    nh, nw = dh.size, dw.size
    val = np.asarray(
        np.mean(dh * dh, dtype=np.float64) + np.mean(dw * dw, dtype=np.float64),
        dtype=av.dtype,
    )

    def vjp(g):
        ga = np.zeros_like(av)
        gh = (g * 2.0 / nh) * dh
        gw = (g * 2.0 / nw) * dw
        ga[:, 1:] += gh
        ga[:, :-1] -= gh
        ga[:, :, 1:] += gw
        ga[:, :, :-1] -= gw
        return (ga, -ga)

    return _node(val, (a, b), vjp)


def silu(a):
    sig = 1.0 / (1.0 + np.exp(-a.value))
    val = a.value * sig

    def vjp(g):
        return (g * (sig * (1.0 + a.value * (1.0 - sig))),)

    return _node(val.astype(a.value.dtype), (a,), vjp)


def sigmoid(a):
    sig = (1.0 / (1.0 + np.exp(-a.value))).astype(a.value.dtype)
    return _node(sig, (a,), lambda g: (g * sig * (1.0 - sig),))


# ---------------------------------------------------------------------------
# shape ops


def concat_c(a, b):
    ca = a.value.shape[-1]
    val = np.concatenate([a.value, b.value], axis=-1)

    def vjp(g):
        return (np.ascontiguousarray(g[..., :ca]), np.ascontiguousarray(g[..., ca:]))

    return _node(val, (a, b), vjp)


def add_channel_bias(x, bias):
    """x: (N, H, W, C) plus per-sample channel bias (N, C) or shared (C,)."""
    bv = bias.value
    if bv.ndim == 1:
        val = x.value + bv

        def vjp(g):
            return (g, g.sum(axis=(0, 1, 2)))

    else:
        val = x.value + bv[:, None, None, :]

        def vjp(g):
            return (g, g.sum(axis=(1, 2)))

    return _node(val, (x, bias), vjp)


def upsample2(x):
    """Nearest-neighbor 2x upsampling of (N, H, W, C)."""
    val = np.repeat(np.repeat(x.value, 2, axis=1), 2, axis=2)

    def vjp(g):
        n, h2, w2, c = g.shape
        return (g.reshape(n, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4)),)

    return _node(val, (x,), vjp)


def space_to_depth(x, r):
    """(N, H, W, C) -> (N, H/r, W/r, C*r*r) block rearrangement."""
    n, h, w, c = x.value.shape
    if h % r or w % r:
        raise ValueError(f"space_to_depth: dims {h}x{w} not divisible by {r}")
    val = np.ascontiguousarray(
        x.value.reshape(n, h // r, r, w // r, r, c).transpose(0, 1, 3, 2, 4, 5)
    ).reshape(n, h // r, w // r, r * r * c)

    def vjp(g):
        gr = g.reshape(n, h // r, w // r, r, r, c).transpose(0, 1, 3, 2, 4, 5)
        return (np.ascontiguousarray(gr).reshape(n, h, w, c),)

    return _node(val, (x,), vjp)


def depth_to_space(x, r):
    """(N, h, w, C*r*r) -> (N, h*r, w*r, C) block rearrangement."""
    n, h, w, crr = x.value.shape
    if crr % (r * r):
        raise ValueError(f"depth_to_space: {crr} channels not divisible by {r * r}")
    c = crr // (r * r)
    val = np.ascontiguousarray(
        x.value.reshape(n, h, w, r, r, c).transpose(0, 1, 3, 2, 4, 5)
    ).reshape(n, h * r, w * r, c)

    def vjp(g):
        gr = g.reshape(n, h, r, w, r, c).transpose(0, 1, 3, 2, 4, 5)
        return (np.ascontiguousarray(gr).reshape(n, h, w, crr),)

    return _node(val, (x,), vjp)


# ---------------------------------------------------------------------------
# dense layers


def linear(x, w, b):
    """x: (N, D) @ w: (D, M) + b: (M,)."""
    val = x.value @ w.value + b.value

    def vjp(g):
        return (g @ w.value.T, x.value.T @ g, g.sum(axis=0))

    return _node(val, (x, w, b), vjp)


def conv2d(x, w, b, stride=1):
    """Same-padded conv for 3x3 kernels, valid for 1x1; stride in {1, 2}.

    x: (N, H, W, Cin), w: (kh, kw, Cin, Cout), b: (Cout,).
    Lowered to a single im2col GEMM; the column buffer is kept for the
    backward pass so patches are copied exactly once.
    """
    xv, wv = x.value, w.value
    n, h, ww_, cin = xv.shape
    kh, kw, cin_w, cout = wv.shape
    if cin != cin_w:
        raise ValueError(f"conv2d: input has {cin} channels, kernel expects {cin_w}")

    if kh == 1 and kw == 1 and stride == 1:
        x2 = xv.reshape(-1, cin)
        val = (x2 @ wv[0, 0] + b.value).reshape(n, h, ww_, cout)

        def vjp_1x1(g):
            gf = g.reshape(-1, cout)
            dw = (x2.T @ gf).reshape(1, 1, cin, cout)
            dx = (gf @ wv[0, 0].T).reshape(n, h, ww_, cin)
            return (dx, dw, gf.sum(axis=0))

        return _node(val, (x, w, b), vjp_1x1)

    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    ho, wo = h // stride, ww_ // stride
    xp = np.pad(xv, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if ph or pw else xv

    def tap_slice(i, j):
        return (
            slice(None),
            slice(i, i + (ho - 1) * stride + 1, stride),
            slice(j, j + (wo - 1) * stride + 1, stride),
            slice(None),
        )

    rows = n * ho * wo
    cols = np.empty((rows, kh * kw * cin), dtype=xv.dtype)
    cols4 = cols.reshape(n, ho, wo, kh * kw * cin)
    k = 0
    for i in range(kh):
        for j in range(kw):
            cols4[..., k * cin : (k + 1) * cin] = xp[tap_slice(i, j)]
            k += 1
    w2 = wv.reshape(kh * kw * cin, cout)
    val = (cols @ w2 + b.value).reshape(n, ho, wo, cout)

    def vjp(g):
        gf = np.ascontiguousarray(g).reshape(rows, cout)
        dw = (cols.T @ gf).reshape(kh, kw, cin, cout)
        dcols = gf @ w2.T
        dxp = np.zeros_like(xp)
        k = 0
        for i in range(kh):
            for j in range(kw):
                dxp[tap_slice(i, j)] += dcols[:, k * cin : (k + 1) * cin].reshape(n, ho, wo, cin)
                k += 1
        dx = dxp[:, ph : ph + h, pw : pw + ww_, :] if ph or pw else dxp
        return (np.ascontiguousarray(dx), dw, gf.sum(axis=0))

    return _node(val, (x, w, b), vjp)


def _group_reduce(arr, groups):
    """Per-(sample, group) means of arr (N,H,W,C), expanded back to (N,1,1,C)."""
    n, h, w, c = arr.shape
    cg = c // groups
    s = arr.sum(axis=(1, 2)).reshape(n, groups, cg).sum(axis=2)
    m = s / (h * w * cg)
    return np.repeat(m, cg, axis=1).reshape(n, 1, 1, c)


def group_norm(x, gamma, beta, groups, eps=1e-5):
    """GroupNorm over (H, W, channels-in-group) of (N, H, W, C)."""
    xv = x.value
    n, h, w, c = xv.shape
    if c % groups:
        raise ValueError(f"group_norm: {c} channels not divisible by {groups} groups")
    mean = _group_reduce(xv, groups)
    var = _group_reduce(xv * xv, groups) - mean * mean
    inv = (1.0 / np.sqrt(np.maximum(var, 0.0) + eps)).astype(xv.dtype)
    xhat = (xv - mean.astype(xv.dtype)) * inv
    val = xhat * gamma.value + beta.value

    def vjp(g):
        dgamma = (g * xhat).sum(axis=(0, 1, 2))
        dbeta = g.sum(axis=(0, 1, 2))
        dxhat = g * gamma.value
        dx = inv * (
            dxhat
            - _group_reduce(dxhat, groups).astype(xv.dtype)
            - xhat * _group_reduce(dxhat * xhat, groups).astype(xv.dtype)
        )
        return (dx, dgamma, dbeta)

    return _node(val, (x, gamma, beta), vjp)
