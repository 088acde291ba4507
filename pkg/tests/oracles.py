"""Scalar-loop reference implementations used as oracles.

Everything here is deliberately written with plain python loops over
indices, independent of the vectorized code paths under test.  Slow on
purpose; only run on small shapes.
"""

import math

import numpy as np


def matmul_ref(a, b):
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += float(a[i, t]) * float(b[t, j])
            out[i, j] = s
    return out


def softmax_ref(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = x.reshape(-1, x.shape[-1])
    oflat = out.reshape(-1, x.shape[-1])
    for r in range(flat.shape[0]):
        row = flat[r]
        m = max(float(v) for v in row)
        exps = [math.exp(float(v) - m) for v in row]
        z = sum(exps)
        for c in range(len(row)):
            oflat[r, c] = exps[c] / z
    return out


def attention_ref(q, k, v, heads):
    """Per-head scaled dot-product attention, all scalar loops."""
    n, d = q.shape
    m = k.shape[0]
    dh = d // heads
    out = np.zeros((n, d), dtype=np.float64)
    for h in range(heads):
        qs = q[:, h * dh:(h + 1) * dh]
        ks = k[:, h * dh:(h + 1) * dh]
        vs = v[:, h * dh:(h + 1) * dh]
        logits = matmul_ref(qs, ks.T) / math.sqrt(dh)
        w = softmax_ref(logits)
        out[:, h * dh:(h + 1) * dh] = matmul_ref(w, vs)
    return out


def gelu_ref(x):
    c = math.sqrt(2.0 / math.pi)
    out = np.zeros_like(np.asarray(x, dtype=np.float64))
    flat_in = np.asarray(x, dtype=np.float64).ravel()
    flat_out = out.ravel()
    for i, v in enumerate(flat_in):
        flat_out[i] = 0.5 * v * (1.0 + math.tanh(c * (v + 0.044715 * v ** 3)))
    return out


def adaptive_avg_pool_ref(x, oh, ow):
    """Brute-force partition means: window [floor(i*H/oh), ceil((i+1)*H/oh))."""
    h, w, c = x.shape
    out = np.zeros((oh, ow, c), dtype=np.float64)
    for i in range(oh):
        y0 = (i * h) // oh
        y1 = math.ceil((i + 1) * h / oh)
        for j in range(ow):
            x0 = (j * w) // ow
            x1 = math.ceil((j + 1) * w / ow)
            for ch in range(c):
                s = 0.0
                for y in range(y0, y1):
                    for xx in range(x0, x1):
                        s += float(x[y, xx, ch])
                out[i, j, ch] = s / ((y1 - y0) * (x1 - x0))
    return out


def bilinear_resize_ref(x, nh, nw, align_corners=False):
    """Closed-form interpolation at each output cell."""
    h, w, c = x.shape
    out = np.zeros((nh, nw, c), dtype=np.float64)

    def src(i, n_out, n_in):
        if align_corners:
            s = 0.0 if n_out == 1 else i * (n_in - 1) / (n_out - 1)
        else:
            s = (i + 0.5) * n_in / n_out - 0.5
        return min(max(s, 0.0), float(n_in - 1))

    for i in range(nh):
        sy = src(i, nh, h)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(nw):
            sx = src(j, nw, w)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            for ch in range(c):
                top = (1 - fx) * float(x[y0, x0, ch]) + fx * float(x[y0, x1, ch])
                bot = (1 - fx) * float(x[y1, x0, ch]) + fx * float(x[y1, x1, ch])
                out[i, j, ch] = (1 - fy) * top + fy * bot
    return out


def conv2d_ref(x, w, b=None, stride=1):
    """Same-padding cross-correlation with scalar loops."""
    h, wd, ci = x.shape
    kh, kw, _, co = w.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    ho = (h + (kh - 1) - kh) // stride + 1
    wo = (wd + (kw - 1) - kw) // stride + 1
    out = np.zeros((ho, wo, co), dtype=np.float64)
    for i in range(ho):
        for j in range(wo):
            for o in range(co):
                s = 0.0 if b is None else float(b[o])
                for u in range(kh):
                    for v in range(kw):
                        y = i * stride + u - ph
                        xx = j * stride + v - pw
                        if 0 <= y < h and 0 <= xx < wd:
                            for ch in range(ci):
                                s += float(x[y, xx, ch]) * float(w[u, v, ch, o])
                out[i, j, o] = s
    return out


def depthwise_conv2d_ref(x, w, b=None):
    h, wd, c = x.shape
    kh, kw, _ = w.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    out = np.zeros((h, wd, c), dtype=np.float64)
    for i in range(h):
        for j in range(wd):
            for ch in range(c):
                s = 0.0 if b is None else float(b[ch])
                for u in range(kh):
                    for v in range(kw):
                        y, xx = i + u - ph, j + v - pw
                        if 0 <= y < h and 0 <= xx < wd:
                            s += float(x[y, xx, ch]) * float(w[u, v, ch])
                out[i, j, ch] = s
    return out


def max_pool_ref(x, k):
    h, w, c = x.shape
    out = np.zeros((h // k, w // k, c), dtype=np.float64)
    for i in range(h // k):
        for j in range(w // k):
            for ch in range(c):
                best = -math.inf
                for u in range(k):
                    for v in range(k):
                        best = max(best, float(x[i * k + u, j * k + v, ch]))
                out[i, j, ch] = best
    return out


def upconv2x_ref(x, w, b=None):
    h, wd, ci = x.shape
    co = w.shape[3]
    out = np.zeros((2 * h, 2 * wd, co), dtype=np.float64)
    for i in range(h):
        for j in range(wd):
            for u in range(2):
                for v in range(2):
                    for o in range(co):
                        s = 0.0
                        for ch in range(ci):
                            s += float(x[i, j, ch]) * float(w[u, v, ch, o])
                        out[2 * i + u, 2 * j + v, o] = s
    if b is not None:
        for o in range(co):
            out[:, :, o] += float(b[o])
    return out


def layer_norm_ref(x, scale, shift, eps=1e-5):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = x.reshape(-1, x.shape[-1])
    oflat = out.reshape(-1, x.shape[-1])
    for r in range(flat.shape[0]):
        row = flat[r]
        mu = sum(float(v) for v in row) / len(row)
        var = sum((float(v) - mu) ** 2 for v in row) / len(row)
        inv = 1.0 / math.sqrt(var + eps)
        for c in range(len(row)):
            oflat[r, c] = (float(row[c]) - mu) * inv * float(scale[c]) + float(shift[c])
    return out


def patch_merge_ref(x, wproj, scale, shift, eps=1e-5):
    """Gather 2x2 neighborhoods, layer-norm the 4C vector, project to 2C."""
    h, w, c = x.shape
    gathered = np.zeros((h // 2, w // 2, 4 * c), dtype=np.float64)
    for i in range(h // 2):
        for j in range(w // 2):
            parts = [x[2 * i, 2 * j], x[2 * i, 2 * j + 1],
                     x[2 * i + 1, 2 * j], x[2 * i + 1, 2 * j + 1]]
            gathered[i, j] = np.concatenate([np.asarray(p, dtype=np.float64) for p in parts])
    normed = layer_norm_ref(gathered, scale, shift, eps)
    out = np.zeros((h // 2, w // 2, wproj.shape[1]), dtype=np.float64)
    for i in range(h // 2):
        for j in range(w // 2):
            out[i, j] = matmul_ref(normed[i, j][None, :], np.asarray(wproj, dtype=np.float64))[0]
    return out


def iou_ref(a, b):
    inter = 0
    union = 0
    for pa, pb in zip(np.asarray(a).ravel(), np.asarray(b).ravel()):
        if pa and pb:
            inter += 1
        if pa or pb:
            union += 1
    return inter / union if union else 1.0
