"""Differentiable primitives over `Tensor`.

Forward passes are vectorized numpy; every primitive registers a
hand-derived vector-Jacobian product on the active tape.  The scalar-loop
reference implementations these are checked against live in the test
suite, not here.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from liveseg.numerics.tensor import Tensor, active_tape, as_tensor

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715
_LOG_CLAMP = 1e-12


def _record(out: Tensor, inputs, vjp) -> Tensor:
    tape = active_tape()
    if tape is not None:
        tape.record(out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data)

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _record(out, (a, b), vjp)


def scale(x: Tensor, s: float) -> Tensor:
    """Multiply by a non-learnable python scalar (cheaper than mul)."""
    out = Tensor(x.data * x.dtype.type(s))
    return _record(out, (x,), lambda g: (g * s,))


def power(x: Tensor, p: float) -> Tensor:
    """Elementwise x**p for a constant exponent."""
    out = Tensor(np.power(x.data, p))
    return _record(out, (x,), lambda g: (g * p * np.power(x.data, p - 1.0),))


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = Tensor(x.data.reshape(shape))
    return _record(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(x.data.transpose(axes))
    return _record(out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = Tensor(np.concatenate([x.data for x in xs], axis=axis))
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _record(out, tuple(xs), vjp)


def slice_(x: Tensor, bounds: Sequence[Optional[tuple]]) -> Tensor:
    """Slice leading axes; `bounds[i]` is (start, stop) or None for axis i."""
    key = tuple(slice(None) if b is None else slice(b[0], b[1]) for b in bounds)
    out = Tensor(x.data[key])

    def vjp(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[key] = g
        return (gx,)

    return _record(out, (x,), vjp)


# ---------------------------------------------------------------------------
# nonlinearities

def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit (tanh approximation)."""
    d = x.data
    # single-buffer evaluation; d**3 via multiplies (array power is slow)
    t = d * d
    t *= _GELU_A
    t += 1.0
    t *= d
    t *= _GELU_C
    np.tanh(t, out=t)
    out_arr = t + 1.0
    out_arr *= d
    out_arr *= 0.5
    out = Tensor(out_arr)

    def vjp(g):
        sech2 = 1.0 - t * t
        local = 0.5 * (1.0 + t) + 0.5 * d * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_A * d * d)
        return (g * local,)

    return _record(out, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * y * (1.0 - y),))


def log(x: Tensor) -> Tensor:
    """Natural log, clamped below at 1e-12 (gradient is 0 in the clamped zone)."""
    d = x.data
    out = Tensor(np.log(np.maximum(d, _LOG_CLAMP)))
    return _record(out, (x,), lambda g: (np.where(d > _LOG_CLAMP, g / d, 0.0),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    d = x.data
    m = d.max(axis=axis, keepdims=True)
    e = np.exp(d - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _record(out, (x,), vjp)


# ---------------------------------------------------------------------------
# reductions

def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).astype(g.dtype, copy=True),)
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        if not keepdims:
            g = np.expand_dims(g, tuple(a % x.data.ndim for a in axes))
        return (np.broadcast_to(g, x.shape).astype(g.dtype, copy=True),)

    return _record(out, (x,), vjp)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else np.prod(
        [x.shape[a] for a in ((axis,) if isinstance(axis, int) else axis)])
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# matmul and attention

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; N-D inputs batch over identical leading axes."""
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise ValueError(f"matmul needs equal-rank >=2 operands, got {a.shape} @ {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def vjp(g):
        ga = np.matmul(g, b.data.swapaxes(-1, -2))
        gb = np.matmul(a.data.swapaxes(-1, -2), g)
        return ga, gb

    return _record(out, (a, b), vjp)


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int = 1) -> Tensor:
    """Multi-head scaled dot-product attention over token sequences.

    q is (n, d); k and v are (m, d).  Each head attends with scale
    1/sqrt(d/heads); per-head outputs are concatenated back to (n, d).
    """
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"key/value length mismatch: {k.shape[0]} vs {v.shape[0]}")
    if q.shape[1] != k.shape[1] or k.shape[1] != v.shape[1]:
        raise ValueError("query/key/value channel mismatch")
    d = q.shape[1]
    if d % heads != 0:
        raise ValueError(f"channels {d} not divisible by {heads} heads")
    n, m, dh = q.shape[0], k.shape[0], d // heads
    if heads == 1:
        logits = scale(matmul(q, transpose(k, (1, 0))), 1.0 / math.sqrt(dh))
        return matmul(softmax(logits, axis=-1), v)
    qh = transpose(reshape(q, (n, heads, dh)), (1, 0, 2))
    kh = transpose(reshape(k, (m, heads, dh)), (1, 2, 0))
    vh = transpose(reshape(v, (m, heads, dh)), (1, 0, 2))
    logits = scale(matmul(qh, kh), 1.0 / math.sqrt(dh))
    weights = softmax(logits, axis=-1)
    mixed = matmul(weights, vh)
    return reshape(transpose(mixed, (1, 0, 2)), (n, d))


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, w)
    return out if b is None else add(out, b)


def stop_gradient(x: Tensor) -> Tensor:
    """Identity whose gradient does not flow (fresh, unrecorded tensor)."""
    return Tensor(x.data)


# ---------------------------------------------------------------------------
# normalization

def layer_norm(x: Tensor, scale_t: Tensor, shift_t: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = Tensor(y * scale_t.data + shift_t.data)

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        gscale = (g * y).sum(axis=lead)
        gshift = g.sum(axis=lead)
        gy = g * scale_t.data
        gx = inv * (gy - gy.mean(axis=-1, keepdims=True)
                    - y * (gy * y).mean(axis=-1, keepdims=True))
        return gx, gscale, gshift

    return _record(out, (x, scale_t, shift_t), vjp)


def group_norm(x: Tensor, scale_t: Tensor, shift_t: Tensor,
               groups: int = 1, eps: float = 1e-5) -> Tensor:
    """Spatial group normalization over an (H, W, C) map, then per-channel affine."""
    h, w, c = x.shape
    if c % groups != 0:
        raise ValueError(f"{c} channels not divisible into {groups} groups")
    cg = c // groups
    ones = Tensor(np.ones(h * w * cg, dtype=x.dtype))
    zeros = Tensor(np.zeros(h * w * cg, dtype=x.dtype))
    grouped = reshape(transpose(reshape(x, (h, w, groups, cg)), (2, 0, 1, 3)),
                      (groups, h * w * cg))
    normed = layer_norm(grouped, ones, zeros, eps=eps)
    back = reshape(transpose(reshape(normed, (groups, h, w, cg)), (1, 2, 0, 3)), (h, w, c))
    return add(mul(back, scale_t), shift_t)


# ---------------------------------------------------------------------------
# pooling

def max_pool(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k-by-k max pooling over an (H, W, C) map."""
    h, w, c = x.shape
    if h % k or w % k:
        raise ValueError(f"({h},{w}) not divisible by pool size {k}")
    ho, wo = h // k, w // k
    tiles = x.data.reshape(ho, k, wo, k, c).transpose(0, 2, 4, 1, 3).reshape(ho, wo, c, k * k)
    idx = tiles.argmax(axis=-1)
    out = Tensor(np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0])

    def vjp(g):
        gt = np.zeros_like(tiles)
        np.put_along_axis(gt, idx[..., None], g[..., None], axis=-1)
        return (np.ascontiguousarray(
            gt.reshape(ho, wo, c, k, k).transpose(0, 3, 1, 4, 2).reshape(h, w, c)),)

    return _record(out, (x,), vjp)


from functools import lru_cache


@lru_cache(maxsize=256)
def _pool_matrix(size_in: int, size_out: int, dtype_name: str) -> np.ndarray:
    """Averaging matrix whose windows tile the input (shared-edge partitions)."""
    m = np.zeros((size_out, size_in), dtype=np.dtype(dtype_name))
    for i in range(size_out):
        lo = (i * size_in) // size_out
        hi = -(-((i + 1) * size_in) // size_out)  # ceil division
        m[i, lo:hi] = 1.0 / (hi - lo)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=256)
def _resize_matrix(size_in: int, size_out: int, align_corners: bool,
                   dtype_name: str) -> np.ndarray:
    m = np.zeros((size_out, size_in), dtype=np.dtype(dtype_name))
    for i in range(size_out):
        if align_corners:
            src = 0.0 if size_out == 1 else i * (size_in - 1) / (size_out - 1)
        else:
            src = (i + 0.5) * size_in / size_out - 0.5
        src = min(max(src, 0.0), float(size_in - 1))
        lo = int(math.floor(src))
        if lo >= size_in - 1:
            m[i, size_in - 1] = 1.0
        else:
            f = src - lo
            m[i, lo] = 1.0 - f
            m[i, lo + 1] = f
    m.setflags(write=False)
    return m


def _apply_rows_cols(arr: np.ndarray, my: np.ndarray, mx: np.ndarray) -> np.ndarray:
    """Apply per-channel separable linear maps: out[i,j,c] = my@arr@mx.T."""
    h, w, c = arr.shape
    t = (my @ arr.reshape(h, w * c)).reshape(my.shape[0], w, c)
    # (oh, W, C) batched against (ow, W): one broadcasted GEMM, output contiguous
    return np.matmul(mx, t)


def _separable(x: Tensor, my: np.ndarray, mx: np.ndarray) -> Tensor:
    out = Tensor(_apply_rows_cols(x.data, my, mx))
    return _record(out, (x,), lambda g: (_apply_rows_cols(
        g, np.ascontiguousarray(my.T), np.ascontiguousarray(mx.T)),))


def adaptive_avg_pool(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Mean-pool an (H, W, C) map onto an out_h-by-out_w grid of near-equal cells."""
    h, w, _ = x.shape
    if out_h > h or out_w > w:
        raise ValueError(f"pool output ({out_h},{out_w}) exceeds input ({h},{w})")
    return _separable(x, _pool_matrix(h, out_h, x.dtype.name),
                      _pool_matrix(w, out_w, x.dtype.name))


def bilinear_resize(x: Tensor, new_h: int, new_w: int, align_corners: bool = False) -> Tensor:
    """Bilinear resampling of an (H, W, C) map; exact identity at equal sizes."""
    h, w, _ = x.shape
    if new_h < 1 or new_w < 1:
        raise ValueError("resize target must be at least 1x1")
    return _separable(x, _resize_matrix(h, new_h, align_corners, x.dtype.name),
                      _resize_matrix(w, new_w, align_corners, x.dtype.name))


# ---------------------------------------------------------------------------
# convolutions

def _pad_hw(arr: np.ndarray, kh: int, kw: int) -> np.ndarray:
    ph0, ph1 = (kh - 1) // 2, kh - 1 - (kh - 1) // 2
    pw0, pw1 = (kw - 1) // 2, kw - 1 - (kw - 1) // 2
    return np.pad(arr, ((ph0, ph1), (pw0, pw1), (0, 0)))


def _conv1x1(x: Tensor, w: Tensor, b: Optional[Tensor]) -> Tensor:
    """Pointwise convolution: a single GEMM, no im2col."""
    h, wd, ci = x.shape
    co = w.shape[3]
    wmat = w.data.reshape(ci, co)
    out2 = x.data.reshape(h * wd, ci) @ wmat
    if b is not None:
        out2 += b.data
    out = Tensor(out2.reshape(h, wd, co))

    def vjp(g):
        g2 = g.reshape(h * wd, co)
        gx = (g2 @ wmat.T).reshape(h, wd, ci)
        gw = (x.data.reshape(h * wd, ci).T @ g2).reshape(1, 1, ci, co)
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return _record(out, inputs, vjp)


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
           stride: int = 1, padding: str = "same") -> Tensor:
    """2-D convolution on (H, W, Cin) with kernel (kh, kw, Cin, Cout)."""
    kh, kw, ci, co = w.shape
    if x.shape[2] != ci:
        raise ValueError(f"conv2d channel mismatch: input {x.shape[2]}, kernel {ci}")
    if kh == 1 and kw == 1 and stride == 1:
        return _conv1x1(x, w, b)
    if stride == 1:
        return _conv_shift(x, w, b)
    xp = _pad_hw(x.data, kh, kw) if padding == "same" else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    windows = windows[::stride, ::stride]
    ho, wo = windows.shape[0], windows.shape[1]
    col = np.ascontiguousarray(windows).reshape(ho * wo, ci * kh * kw)
    wmat = np.ascontiguousarray(w.data.transpose(2, 0, 1, 3)).reshape(ci * kh * kw, co)
    out2 = col @ wmat
    if b is not None:
        out2 = out2 + b.data
    out = Tensor(out2.reshape(ho, wo, co))

    def vjp(g):
        g2 = g.reshape(ho * wo, co)
        gw = (col.T @ g2).reshape(ci, kh, kw, co).transpose(1, 2, 0, 3)
        gcol = (g2 @ wmat.T).reshape(ho, wo, ci, kh, kw)
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for u in range(kh):
            for v in range(kw):
                gxp[u:u + stride * ho:stride, v:v + stride * wo:stride] += gcol[:, :, :, u, v]
        if padding == "same":
            ph0, pw0 = (kh - 1) // 2, (kw - 1) // 2
            gx = gxp[ph0:ph0 + x.shape[0], pw0:pw0 + x.shape[1]]
        else:
            gx = gxp
        gx = np.ascontiguousarray(gx)
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return _record(out, inputs, vjp)


def _conv_shift(x: Tensor, w: Tensor, b: Optional[Tensor]) -> Tensor:
    """Stride-1 same-padding convolution as one GEMM per kernel tap."""
    kh, kw, ci, co = w.shape
    h, wd = x.shape[0], x.shape[1]
    xp = _pad_hw(x.data, kh, kw)
    n = h * wd
    recording = active_tape() is not None
    out2 = np.zeros((n, co), dtype=x.dtype)
    slabs = [] if recording else None
    for u in range(kh):
        for v in range(kw):
            slab = xp[u:u + h, v:v + wd].reshape(n, ci)
            if recording:
                slabs.append(slab)
            out2 += slab @ w.data[u, v]
    if b is not None:
        out2 += b.data
    out = Tensor(out2.reshape(h, wd, co))
    if not recording:
        return out

    def vjp(g):
        g2 = g.reshape(n, co)
        gw = np.empty_like(w.data)
        gxp = np.zeros_like(xp)
        for idx, (u, v) in enumerate((u, v) for u in range(kh) for v in range(kw)):
            gw[u, v] = slabs[idx].T @ g2
            gxp[u:u + h, v:v + wd] += (g2 @ w.data[u, v].T).reshape(h, wd, ci)
        ph0, pw0 = (kh - 1) // 2, (kw - 1) // 2
        gx = np.ascontiguousarray(gxp[ph0:ph0 + h, pw0:pw0 + wd])
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return _record(out, inputs, vjp)


def depthwise_conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Per-channel 2-D convolution, same padding: kernel (kh, kw, C)."""
    kh, kw, c = w.shape
    if x.shape[2] != c:
        raise ValueError(f"depthwise channel mismatch: input {x.shape[2]}, kernel {c}")
    h, wd = x.shape[0], x.shape[1]
    xp = _pad_hw(x.data, kh, kw)
    acc = np.zeros((h, wd, c), dtype=x.dtype)
    for u in range(kh):
        for v in range(kw):
            acc += xp[u:u + h, v:v + wd] * w.data[u, v]
    if b is not None:
        acc += b.data
    out = Tensor(acc)

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w.data)
        for u in range(kh):
            for v in range(kw):
                gxp[u:u + h, v:v + wd] += g * w.data[u, v]
                gw[u, v] = (xp[u:u + h, v:v + wd] * g).sum(axis=(0, 1))
        ph0, pw0 = (kh - 1) // 2, (kw - 1) // 2
        gx = np.ascontiguousarray(gxp[ph0:ph0 + h, pw0:pw0 + wd])
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1))

    inputs = (x, w) if b is None else (x, w, b)
    return _record(out, inputs, vjp)


def upconv2x(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Transposed convolution with a 2x2 kernel and stride 2 (exact 2x upsample)."""
    h, wd, ci = x.shape
    if w.shape[:3] != (2, 2, ci):
        raise ValueError(f"upconv2x kernel must be (2,2,{ci},Cout), got {w.shape}")
    co = w.shape[3]
    t = np.tensordot(x.data, w.data, axes=([2], [2]))      # (H, W, 2, 2, Cout)
    out2 = np.ascontiguousarray(t.transpose(0, 2, 1, 3, 4)).reshape(2 * h, 2 * wd, co)
    if b is not None:
        out2 = out2 + b.data
    out = Tensor(out2)

    def vjp(g):
        gt = g.reshape(h, 2, wd, 2, co).transpose(0, 2, 1, 3, 4)   # (H, W, 2, 2, Cout)
        gx = np.tensordot(gt, w.data, axes=([2, 3, 4], [0, 1, 3]))
        gw = np.tensordot(x.data, gt, axes=([0, 1], [0, 1])).transpose(1, 2, 0, 3)
        if b is None:
            return np.ascontiguousarray(gx), np.ascontiguousarray(gw)
        return (np.ascontiguousarray(gx), np.ascontiguousarray(gw), g.sum(axis=(0, 1)))

    inputs = (x, w) if b is None else (x, w, b)
    return _record(out, inputs, vjp)


# ---------------------------------------------------------------------------
# lookup

def embed(indices: np.ndarray, table: Tensor) -> Tensor:
    """Gather rows of `table` by an integer index grid; differentiable in the table."""
    idx = np.asarray(indices)
    out = Tensor(table.data[idx])

    def vjp(g):
        gt = np.zeros_like(table.data)
        for k in range(table.shape[0]):
            sel = idx == k
            if sel.any():
                gt[k] = g[sel].sum(axis=0)
        return (gt,)

    return _record(out, (table,), vjp)
