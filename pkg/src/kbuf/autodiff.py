"""Minimal reverse-mode automatic differentiation on numpy arrays.

A :class:`Tensor` wraps an ndarray plus an optional gradient; ops build a
graph of closures and ``backward()`` walks it in reverse topological order.
The op set is exactly what the rendering pipeline needs (dense layers, 2-D
convolution, instance norm, pooling/upsampling, softmax, gather/scatter and
two compositing kernels); there is no general broadcasting and no batch axis.

Training math runs in float32 by default; everything works identically in
float64, which the finite-difference harness uses to separate discretization
error from genuine backward bugs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "parameter",
    "constant",
    "add", "sub", "mul", "scale", "exp", "relu", "sigmoid", "softplus",
    "dense", "conv2d", "instance_norm",
    "softmax", "mse_loss", "downsample2", "upsample2",
    "concat", "reshape", "permute", "pad_reflect", "crop2d",
    "gather_rows", "scatter_rows", "cols", "tile_rows", "weighted_gather",
    "fuse_layers", "ordered_blend", "alpha_composite_k",
    "AdamState", "adam_step", "grad_check",
]


class Tensor:
    """A value in the computation graph.

    ``data`` is the ndarray payload; ``grad`` (same shape) accumulates during
    backward. Non-leaf tensors carry parent links and a backward closure.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents: tuple = ()
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-accumulate gradients from this scalar into every leaf."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar root")
        order: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._bwd is not None:
                node._bwd(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other if isinstance(other, Tensor) else constant(other))

    def __sub__(self, other):
        return sub(self, other if isinstance(other, Tensor) else constant(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=False)


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
        if t.grad.shape != t.data.shape:  # scalar-root broadcast guard
            t.grad = np.broadcast_to(t.grad, t.data.shape).copy()
    else:
        t.grad += g


def _node(data: np.ndarray, parents: tuple[Tensor, ...], bwd) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bwd = bwd
    return out


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# ---------------------------------------------------------------------------
# Elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")

    def bwd(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _node(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"sub shape mismatch {a.shape} vs {b.shape}")

    def bwd(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _node(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch {a.shape} vs {b.shape}")

    def bwd(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _node(a.data * b.data, (a, b), bwd)


def scale(x: Tensor, s: float) -> Tensor:
    def bwd(g):
        _accumulate(x, g * s)

    return _node(x.data * s, (x,), bwd)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)

    def bwd(g):
        _accumulate(x, g * y)

    return _node(y, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(x, g * (x.data > 0))

    return _node(np.maximum(x.data, 0), (x,), bwd)


def _expit(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _expit(x.data)

    def bwd(g):
        _accumulate(x, g * y * (1.0 - y))

    return _node(y, (x,), bwd)


def softplus(x: Tensor) -> Tensor:
    y = np.logaddexp(0.0, x.data)

    def bwd(g):
        _accumulate(x, g * _expit(x.data))

    return _node(y, (x,), bwd)


# ---------------------------------------------------------------------------
# Linear algebra


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map rows(x) @ weight + bias; x is (N, in), weight (in, out)."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ValueError("dense expects 2-D input and weight")
    if x.shape[1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise ValueError(
            f"dense shape mismatch: x{x.shape} w{weight.shape} b{bias.shape}")
    y = x.data @ weight.data + bias.data

    def bwd(g):
        _accumulate(weight, x.data.T @ g)
        _accumulate(bias, g.sum(axis=0))
        _accumulate(x, g @ weight.data.T)

    return _node(y, (x, weight, bias), bwd)


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    cin, h, w = x.shape
    xp = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (Cin, H, W, kh, kw)
    return win.transpose(0, 3, 4, 1, 2).reshape(cin * kh * kw, h * w)


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Same-padded cross-correlation: (Cin, H, W) -> (Cout, H, W)."""
    cin, h, w = x.shape
    cout, cin_k, kh, kw = kernels.shape
    if cin_k != cin or bias.shape != (cout,):
        raise ValueError(
            f"conv2d shape mismatch: x{x.shape} k{kernels.shape} b{bias.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel sides must be odd")
    cols = _im2col(x.data, kh, kw)
    y = (kernels.data.reshape(cout, -1) @ cols + bias.data[:, None]).reshape(cout, h, w)

    def bwd(g):
        gflat = g.reshape(cout, -1)
        _accumulate(bias, gflat.sum(axis=1))
        if kernels.requires_grad:
            _accumulate(kernels, (gflat @ cols.T).reshape(kernels.shape))
        if x.requires_grad:
            kswap = kernels.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
            gcols = _im2col(g, kh, kw)
            dx = (np.ascontiguousarray(kswap).reshape(cin, -1) @ gcols).reshape(cin, h, w)
            _accumulate(x, dx)

    return _node(y, (x, kernels, bias), bwd)


def instance_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel spatial standardization of (C, H, W), then affine."""
    c, h, w = x.shape
    if h * w < 2:
        raise ValueError("instance_norm needs at least 2 spatial elements")
    if gain.shape != (c,) or bias.shape != (c,):
        raise ValueError("gain/bias must be per-channel vectors")
    mu = x.data.mean(axis=(1, 2), keepdims=True)
    var = x.data.var(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = xhat * gain.data[:, None, None] + bias.data[:, None, None]

    def bwd(g):
        _accumulate(gain, (g * xhat).sum(axis=(1, 2)))
        _accumulate(bias, g.sum(axis=(1, 2)))
        if x.requires_grad:
            gh = g * gain.data[:, None, None]
            m1 = gh.mean(axis=(1, 2), keepdims=True)
            m2 = (gh * xhat).mean(axis=(1, 2), keepdims=True)
            _accumulate(x, inv * (gh - m1 - xhat * m2))

    return _node(y, (x, gain, bias), bwd)


# ---------------------------------------------------------------------------
# Shape plumbing


def reshape(x: Tensor, shape) -> Tensor:
    def bwd(g):
        _accumulate(x, g.reshape(x.shape))

    return _node(x.data.reshape(shape), (x,), bwd)


def permute(x: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)

    def bwd(g):
        _accumulate(x, g.transpose(inverse))

    return _node(np.ascontiguousarray(x.data.transpose(axes)), (x,), bwd)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, a, b in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(a, b)
            _accumulate(t, g[tuple(sl)])

    return _node(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), bwd)


def pad_reflect(x: Tensor, pads: tuple[int, int, int, int]) -> Tensor:
    """Reflection-pad (C, H, W) by (top, bottom, left, right)."""
    pt, pb, pl, pr = pads
    c, h, w = x.shape
    ridx = np.pad(np.arange(h), (pt, pb), mode="reflect")
    cidx = np.pad(np.arange(w), (pl, pr), mode="reflect")
    y = x.data[:, ridx[:, None], cidx[None, :]]

    def bwd(g):
        dx = np.zeros((c, h, w + pl + pr), dtype=g.dtype)
        np.add.at(dx, (slice(None), ridx), g)
        dx2 = np.zeros((c, h, w), dtype=g.dtype)
        np.add.at(dx2.transpose(0, 2, 1), (slice(None), cidx), dx.transpose(0, 2, 1))
        _accumulate(x, dx2)

    return _node(y, (x,), bwd)


def crop2d(x: Tensor, margins: tuple[int, int, int, int]) -> Tensor:
    """Remove (top, bottom, left, right) margins from (C, H, W)."""
    pt, pb, pl, pr = margins
    c, h, w = x.shape
    sl = (slice(None), slice(pt, h - pb or None), slice(pl, w - pr or None))

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[sl] = g
        _accumulate(x, dx)

    return _node(np.ascontiguousarray(x.data[sl]), (x,), bwd)


# ---------------------------------------------------------------------------
# Pooling / resampling


def downsample2(x: Tensor) -> Tensor:
    """Stride-2 average pooling of (C, H, W); H and W must be even."""
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError("downsample2 needs even spatial dims")
    y = x.data.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))

    def bwd(g):
        _accumulate(x, np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25)

    return _node(y, (x,), bwd)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsampling of (C, H, W)."""
    c, h, w = x.shape
    y = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def bwd(g):
        _accumulate(x, g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)))

    return _node(y, (x,), bwd)


# ---------------------------------------------------------------------------
# Reductions / losses


def softmax(x: Tensor, axis: int) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(x, y * (g - dot))

    return _node(y, (x,), bwd)


def mse_loss(pred: Tensor, target) -> Tensor:
    t = _as_array(target)
    if pred.shape != t.shape:
        raise ValueError(f"mse shape mismatch {pred.shape} vs {t.shape}")
    diff = pred.data - t
    y = np.asarray((diff * diff).mean(), dtype=pred.dtype)

    def bwd(g):
        _accumulate(pred, (2.0 / diff.size) * diff * g)

    return _node(y, (pred,), bwd)


# ---------------------------------------------------------------------------
# Gather / scatter


def gather_rows(x: Tensor, index) -> Tensor:
    """Select rows of a 2-D tensor; backward scatter-adds."""
    idx = np.asarray(index, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= x.shape[0]):
        raise IndexError("gather_rows index out of range")
    y = x.data[idx]

    def bwd(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            np.add.at(dx, idx, g)
            _accumulate(x, dx)

    return _node(y, (x,), bwd)


def scatter_rows(x: Tensor, index, n_rows: int) -> Tensor:
    """Place rows of (M, C) at unique positions of an (n_rows, C) zero sheet."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.size != np.unique(idx).size:
        raise ValueError("scatter_rows targets must be unique")
    if np.any(idx < 0) or np.any(idx >= n_rows):
        raise IndexError("scatter_rows index out of range")
    y = np.zeros((n_rows, x.shape[1]), dtype=x.dtype)
    y[idx] = x.data

    def bwd(g):
        _accumulate(x, g[idx])

    return _node(y, (x,), bwd)


def cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Column slice [start:stop] of a 2-D tensor."""
    if x.data.ndim != 2:
        raise ValueError("cols expects a 2-D tensor")

    def bwd(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            dx[:, start:stop] = g
            _accumulate(x, dx)

    return _node(np.ascontiguousarray(x.data[:, start:stop]), (x,), bwd)


def tile_rows(x: Tensor, n: int) -> Tensor:
    """Repeat a vector (F,) into (n, F); backward sums over rows."""
    if x.data.ndim != 1:
        raise ValueError("tile_rows expects a 1-D tensor")
    y = np.broadcast_to(x.data, (n, x.shape[0])).copy()

    def bwd(g):
        _accumulate(x, g.sum(axis=0))

    return _node(y, (x,), bwd)


def weighted_gather(table: Tensor, index, weights) -> Tensor:
    """Weighted sums of table rows: out[g] = sum_s w[g,s] * table[idx[g,s]].

    ``table`` is (R, F); ``index``/``weights`` are (G, S). Gradients scatter
    back into the touched rows with the same weights.
    """
    idx = np.asarray(index, dtype=np.int64)
    w = np.asarray(weights, dtype=table.dtype)
    if idx.shape != w.shape:
        raise ValueError("index and weights must share a shape")
    y = (table.data[idx] * w[:, :, None]).sum(axis=1)

    def bwd(g):
        if table.requires_grad:
            dt = np.zeros_like(table.data)
            np.add.at(dt, idx, w[:, :, None] * g[:, None, :])
            _accumulate(table, dt)

    return _node(y, (table,), bwd)


# ---------------------------------------------------------------------------
# Compositing kernels


def fuse_layers(stack: Tensor, mask: Tensor) -> Tensor:
    """Collapse (K, H, W, C) with per-layer weights.

    ``mask`` is (K, H, W) (broadcast over channels) or (K, H, W, C).
    """
    if stack.data.ndim != 4 or stack.data.shape[:3] != mask.data.shape[:3]:
        raise ValueError(f"mask {mask.shape} does not match stack {stack.shape}")
    if mask.data.ndim == 3:
        y = np.einsum("khwc,khw->hwc", stack.data, mask.data)

        def bwd(g):
            _accumulate(stack, mask.data[:, :, :, None] * g[None])
            if mask.requires_grad:
                _accumulate(mask, np.einsum("khwc,hwc->khw", stack.data, g))

    elif mask.data.ndim == 4:
        if mask.shape != stack.shape:
            raise ValueError("per-channel mask must match the stack shape")
        y = (stack.data * mask.data).sum(axis=0)

        def bwd(g):
            _accumulate(stack, mask.data * g[None])
            if mask.requires_grad:
                _accumulate(mask, stack.data * g[None])

    else:
        raise ValueError("mask must be (K,H,W) or (K,H,W,C)")
    return _node(y, (stack, mask), bwd)


def ordered_blend(alphas: Tensor, feats: Tensor) -> Tensor:
    """Front-to-back compositing sum_i a_i prod_{j<i}(1-a_j) feats_i -> (C,).

    Backward recomputes leave-one-out transmittance products, so alphas of
    exactly 1 are safe.
    """
    a = alphas.data
    f = feats.data
    n = a.shape[0]
    if f.shape[:1] != (n,):
        raise ValueError("alphas and feats disagree on fragment count")
    if n == 0:
        return _node(np.zeros(f.shape[1:], dtype=f.dtype), (alphas, feats),
                     lambda g: None)
    one_minus = 1.0 - a
    trans = np.ones(n, dtype=f.dtype)
    trans[1:] = np.cumprod(one_minus[:-1])
    wgt = a * trans
    y = wgt @ f

    def bwd(g):
        _accumulate(feats, wgt[:, None] * g[None, :])
        if alphas.requires_grad:
            fg = f @ g  # (n,)
            da = trans * fg
            # effect of a_j on later weights: -a_i * prod_{l<i, l!=j}(1-a_l)
            for j in range(n - 1):
                loo = trans[j]  # prod_{l<j}
                run = loo
                acc = 0.0
                for i in range(j + 1, n):
                    acc += a[i] * run * fg[i]
                    run *= one_minus[i]
                da[j] -= acc
            _accumulate(alphas, da.astype(a.dtype))

    return _node(y, (alphas, feats), bwd)


def alpha_composite_k(alpha: Tensor, rgb: Tensor) -> Tensor:
    """Per-pixel front-to-back compositing over a small layer axis.

    ``alpha`` is (K, H, W) in [0, 1], ``rgb`` is (K, H, W, C); the output is
    (H, W, C). Backward is exact and division-free (leave-one-out products),
    so saturated alphas are safe. O(K^2) in the layer count.
    """
    a = alpha.data
    f = rgb.data
    k = a.shape[0]
    if f.shape[:3] != a.shape:
        raise ValueError("alpha and rgb disagree on layout")
    one_minus = 1.0 - a
    trans = np.ones_like(a)
    if k > 1:
        trans[1:] = np.cumprod(one_minus[:-1], axis=0)
    wgt = a * trans  # (K, H, W)
    y = np.einsum("khw,khwc->hwc", wgt, f)

    def bwd(g):
        _accumulate(rgb, wgt[..., None] * g[None])
        if alpha.requires_grad:
            fg = np.einsum("khwc,hwc->khw", f, g)
            da = trans * fg
            for j in range(k - 1):
                run = trans[j].copy()
                acc = np.zeros_like(run)
                for i in range(j + 1, k):
                    acc += a[i] * run * fg[i]
                    run = run * one_minus[i]
                da[j] -= acc
            _accumulate(alpha, da)

    return _node(y, (alpha, rgb), bwd)


# ---------------------------------------------------------------------------
# Optimizer


class AdamState:
    """First/second moment accumulators for one parameter group."""

    def __init__(self, params: list[Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0


def adam_step(params: list[Tensor], grads: list[np.ndarray],
              state: AdamState, lr: float) -> None:
    """In-place Adam update with bias correction."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError("gradient shape mismatch")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# Verification harness


def grad_check(f, params: list[Tensor], h: float = 1e-5,
               max_probes: int = 24, seed: int = 0,
               floor: float = 1e-6) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    ``f`` rebuilds the scalar graph on each call. Parameters larger than
    ``max_probes`` are probed at random coordinates instead of exhaustively.
    ``floor`` bounds the relative-error denominator so that near-zero
    gradient components are compared at absolute scale (central differences
    carry O(h^2 f''') truncation noise that would otherwise dominate them).
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_probes else rng.choice(n, size=max_probes, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            f_plus = float(f().data)
            flat[c] = orig - h
            f_minus = float(f().data)
            flat[c] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            an = float(ga.reshape(-1)[c])
            denom = max(abs(fd), abs(an), floor)
            worst = max(worst, abs(fd - an) / denom)
    return worst
