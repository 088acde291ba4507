"""The lightweight click-driven decoder.

Four hierarchical stages walk the feature pyramid.  Each stage opens with
a cross-attention block whose query stream carries the click state and
whose key/value come from the preprocessed level; the remaining blocks
self-attend.  Attention cost stays flat because key/value sequences are
pooled onto a small fixed pyramid before attention.  Between stages, 2x2
patch merging halves resolution and doubles channels so the query grid
lines up with the next feature level.

A region-of-interest "zoom" can restrict the deeper blocks of every stage
to a stride-aligned crop around the current foreground estimate; crops are
exact slices (no interpolation) and their outputs overwrite the matching
rectangle of the full grid.

Stage outputs feed a small UperNet-style head producing one logit per
padded input pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from liveseg import numerics as nm
from liveseg.clickstate import Label, RefMask
from liveseg.encoder import MAX_STRIDE, STRIDES, FeatureMapSet
from liveseg.numerics import Tensor


@dataclass
class DecoderConfig:
    depths: tuple = (1, 1, 5, 2)            # self-attention blocks per stage
    base_channels: int = 32                  # C1; stages run C1, 2C1, 4C1, 8C1
    pool_sizes: tuple = (1, 2, 3, 6)         # key/value pyramid side lengths
    zoomin_start: Optional[tuple] = None     # 1-based per-stage block index, None = off
    head_channels: int = 64
    head_pool_sizes: tuple = (1, 2, 3, 6)
    roi_expand: float = 1.4

    def __post_init__(self):
        if len(self.depths) != 4 or any(d < 0 for d in self.depths):
            raise ValueError(f"depths must be four counts >= 0, got {self.depths}")
        if not self.pool_sizes or list(self.pool_sizes) != sorted(set(self.pool_sizes)):
            raise ValueError(f"pool_sizes must be nonempty strictly increasing, "
                             f"got {self.pool_sizes}")
        if self.zoomin_start is not None:
            for i, z in enumerate(self.zoomin_start):
                if not (1 <= z <= self.depths[i] + 1):
                    raise ValueError(f"zoomin_start[{i}]={z} outside 1..{self.depths[i] + 1}")

    @property
    def stage_channels(self) -> tuple:
        return tuple(self.base_channels * (2 ** i) for i in range(4))

    def stage_heads(self, i: int) -> int:
        return max(1, self.stage_channels[i] // 32)


@dataclass(frozen=True)
class RoI:
    """Stride-aligned crop rectangle in padded image coordinates (end-exclusive)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate RoI {self}")
        for v in (self.x0, self.y0, self.x1, self.y1):
            if v % MAX_STRIDE:
                raise ValueError(f"RoI coordinate {v} not a multiple of {MAX_STRIDE}")
            if v < 0:
                raise ValueError(f"negative RoI coordinate {v}")


# --------------------------------------------------------------------------
# weights

def _lin(rng, fan_in, fan_out, dtype):
    return Tensor(rng.normal(0.0, 0.02, size=(fan_in, fan_out)).astype(dtype))


def _zeros(*shape, dtype=np.float32):
    return Tensor(np.zeros(shape, dtype=dtype))


def _ones(*shape, dtype=np.float32):
    return Tensor(np.ones(shape, dtype=dtype))


def _conv(rng, kh, kw, cin, cout, dtype):
    std = float(np.sqrt(2.0 / (kh * kw * cin)))
    return Tensor(rng.normal(0.0, std, size=(kh, kw, cin, cout)).astype(dtype))


class PooledKVWeights:
    """One zero-initialized depthwise 3x3 kernel per pyramid level."""

    def __init__(self, channels: int, sizes, dtype=np.float32):
        if not sizes:
            raise ValueError("empty pooling pyramid")
        self.sizes = tuple(sizes)
        self.dw = [_zeros(3, 3, channels, dtype=dtype) for _ in self.sizes]

    def named_params(self, prefix):
        for s, w in zip(self.sizes, self.dw):
            yield f"{prefix}/dw{s}", w


class BlockWeights:
    def __init__(self, rng, channels: int, heads: int, pool_sizes, dtype=np.float32):
        c = channels
        self.heads = heads
        self.ln_q_s, self.ln_q_b = _ones(c, dtype=dtype), _zeros(c, dtype=dtype)
        self.ln_kv_s, self.ln_kv_b = _ones(c, dtype=dtype), _zeros(c, dtype=dtype)
        self.wq, self.bq = _lin(rng, c, c, dtype), _zeros(c, dtype=dtype)
        self.wk, self.bk = _lin(rng, c, c, dtype), _zeros(c, dtype=dtype)
        self.wv, self.bv = _lin(rng, c, c, dtype), _zeros(c, dtype=dtype)
        self.wo, self.bo = _lin(rng, c, c, dtype), _zeros(c, dtype=dtype)
        self.ln_m_s, self.ln_m_b = _ones(c, dtype=dtype), _zeros(c, dtype=dtype)
        self.w1, self.b1 = _lin(rng, c, 4 * c, dtype), _zeros(4 * c, dtype=dtype)
        self.w2, self.b2 = _lin(rng, 4 * c, c, dtype), _zeros(c, dtype=dtype)
        self.pooled = PooledKVWeights(c, pool_sizes, dtype=dtype)

    def named_params(self, prefix):
        for name in ("ln_q_s", "ln_q_b", "ln_kv_s", "ln_kv_b", "wq", "bq", "wk", "bk",
                     "wv", "bv", "wo", "bo", "ln_m_s", "ln_m_b", "w1", "b1", "w2", "b2"):
            yield f"{prefix}/{name}", getattr(self, name)
        yield from self.pooled.named_params(f"{prefix}/pool")


class PatchMergeWeights:
    def __init__(self, rng, channels: int, dtype=np.float32):
        self.ln_s, self.ln_b = _ones(4 * channels, dtype=dtype), _zeros(4 * channels, dtype=dtype)
        self.proj = _lin(rng, 4 * channels, 2 * channels, dtype)

    def named_params(self, prefix):
        yield f"{prefix}/ln_s", self.ln_s
        yield f"{prefix}/ln_b", self.ln_b
        yield f"{prefix}/proj", self.proj


class _ConvGn:
    def __init__(self, rng, kh, kw, cin, cout, dtype=np.float32):
        self.w = _conv(rng, kh, kw, cin, cout, dtype)
        self.b = _zeros(cout, dtype=dtype)
        self.gs, self.gb = _ones(cout, dtype=dtype), _zeros(cout, dtype=dtype)

    def named_params(self, prefix):
        for name in ("w", "b", "gs", "gb"):
            yield f"{prefix}/{name}", getattr(self, name)

    def __call__(self, x, act=True):
        x = nm.group_norm(nm.conv2d(x, self.w, self.b), self.gs, self.gb)
        return nm.gelu(x) if act else x


class HeadWeights:
    """UperNet-lite: pyramid pooling on the deepest stage, top-down fusion."""

    def __init__(self, rng, cfg: DecoderConfig, dtype=np.float32):
        hc = cfg.head_channels
        cs = cfg.stage_channels
        self.ppm = [_ConvGn(rng, 1, 1, cs[3], hc, dtype) for _ in cfg.head_pool_sizes]
        self.bottleneck = _ConvGn(rng, 3, 3, cs[3] + hc * len(cfg.head_pool_sizes), hc, dtype)
        self.lateral = [_ConvGn(rng, 1, 1, cs[i], hc, dtype) for i in range(3)]
        self.fpn = [_ConvGn(rng, 3, 3, hc, hc, dtype) for _ in range(3)]
        self.fuse = _ConvGn(rng, 3, 3, 4 * hc, hc, dtype)
        self.final_w = _conv(rng, 1, 1, hc, 1, dtype)
        self.final_b = _zeros(1, dtype=dtype)

    def named_params(self, prefix):
        for i, c in enumerate(self.ppm):
            yield from c.named_params(f"{prefix}/ppm{i}")
        yield from self.bottleneck.named_params(f"{prefix}/bottleneck")
        for i, c in enumerate(self.lateral):
            yield from c.named_params(f"{prefix}/lateral{i}")
        for i, c in enumerate(self.fpn):
            yield from c.named_params(f"{prefix}/fpn{i}")
        yield from self.fuse.named_params(f"{prefix}/fuse")
        yield f"{prefix}/final_w", self.final_w
        yield f"{prefix}/final_b", self.final_b


class DecoderWeights:
    def __init__(self, cfg: DecoderConfig, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        cs = cfg.stage_channels
        self.stages = []
        for i in range(4):
            blocks = [BlockWeights(rng, cs[i], cfg.stage_heads(i), cfg.pool_sizes, dtype)
                      for _ in range(cfg.depths[i] + 1)]
            self.stages.append(blocks)
        self.merges = [PatchMergeWeights(rng, cs[i], dtype) for i in range(3)]
        self.head = HeadWeights(rng, cfg, dtype)

    def named_params(self, prefix="decoder"):
        for i, blocks in enumerate(self.stages):
            for j, blk in enumerate(blocks):
                yield from blk.named_params(f"{prefix}/stage{i}/block{j}")
        for i, m in enumerate(self.merges):
            yield from m.named_params(f"{prefix}/merge{i}")
        yield from self.head.named_params(f"{prefix}/head")


# --------------------------------------------------------------------------
# ops

def pooled_kv(b_map: Tensor, w: PooledKVWeights, probe: Optional[list] = None) -> Tensor:
    """Pool a (h, w, C) map onto the pyramid and flatten to key/value tokens.

    Each level is adaptively mean-pooled to s-by-s, refined by a residual
    depthwise 3x3 convolution, and flattened; levels concatenate to a
    sequence of sum(s^2) tokens.  Sizes larger than the map clamp to it
    (duplicates after clamping are dropped, keeping the first).
    """
    h, wd, c = b_map.shape
    levels = []
    seen = set()
    for size, dw in zip(w.sizes, w.dw):
        s = min(size, h, wd)
        if s in seen:
            continue
        seen.add(s)
        p = nm.adaptive_avg_pool(b_map, s, s)
        p = nm.add(p, nm.depthwise_conv2d(p, dw))
        levels.append(nm.reshape(p, (s * s, c)))
    tokens = nm.concat(levels, axis=0) if len(levels) > 1 else levels[0]
    if probe is not None:
        probe.append(tokens.shape[0])
    return tokens


def imsa_block(a: Tensor, b_map: Tensor, w: BlockWeights,
               probe: Optional[list] = None) -> Tensor:
    """Pre-norm residual attention block: query grid `a`, key/value map `b_map`.

    Self-attention is the special case b_map is a; see `msa_block`.
    """
    if a.shape[2] != b_map.shape[2]:
        raise ValueError(f"channel mismatch: query {a.shape[2]}, key/value {b_map.shape[2]}")
    h, wd, c = a.shape
    tokens = nm.reshape(a, (h * wd, c))
    qn = nm.layer_norm(tokens, w.ln_q_s, w.ln_q_b)
    kv = nm.layer_norm(pooled_kv(b_map, w.pooled, probe), w.ln_kv_s, w.ln_kv_b)
    q = nm.linear(qn, w.wq, w.bq)
    k = nm.linear(kv, w.wk, w.bk)
    v = nm.linear(kv, w.wv, w.bv)
    att = nm.linear(nm.attention(q, k, v, w.heads), w.wo, w.bo)
    x = nm.add(tokens, att)
    mn = nm.layer_norm(x, w.ln_m_s, w.ln_m_b)
    mlp = nm.linear(nm.gelu(nm.linear(mn, w.w1, w.b1)), w.w2, w.b2)
    return nm.reshape(nm.add(x, mlp), (h, wd, c))


def msa_block(a: Tensor, w: BlockWeights, probe: Optional[list] = None) -> Tensor:
    """Self-attention block: the interactive block applied to (a, a)."""
    return imsa_block(a, a, w, probe)


def patch_merge(x: Tensor, w: PatchMergeWeights) -> Tensor:
    """Concatenate 2x2 neighborhoods (4C), layer-norm, project to 2C."""
    h, wd, c = x.shape
    if h % 2 or wd % 2:
        raise ValueError(f"patch_merge needs even dims, got ({h},{wd})")
    gathered = nm.reshape(
        nm.transpose(nm.reshape(x, (h // 2, 2, wd // 2, 2, c)), (0, 2, 1, 3, 4)),
        (h // 2, wd // 2, 4 * c))
    flat = nm.reshape(gathered, ((h // 2) * (wd // 2), 4 * c))
    normed = nm.layer_norm(flat, w.ln_s, w.ln_b)
    return nm.reshape(nm.matmul(normed, w.proj), (h // 2, wd // 2, 2 * c))


def compute_roi(pred: np.ndarray, m: RefMask, expand: float = 1.4) -> Optional[RoI]:
    """Bounding box of (predicted fg, positive click disks), grown and aligned.

    The box is scaled by `expand` about its center, clamped to the padded
    frame, and rounded outward to multiples of the maximum stride so every
    stage can crop without interpolation.  Returns None with no foreground
    evidence.
    """
    if pred.shape != m.shape:
        raise ValueError(f"prediction {pred.shape} vs mask {m.shape}")
    evidence = pred | (m.labels == Label.D_FG)
    if not evidence.any():
        return None
    h, w = evidence.shape
    ys, xs = np.nonzero(evidence)
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    cy, cx = (y0 + y1) / 2.0, (x0 + x1) / 2.0
    hh, hw = (y1 - y0) / 2.0 * expand, (x1 - x0) / 2.0 * expand
    ny0, ny1 = max(cy - hh, 0.0), min(cy + hh, float(h))
    nx0, nx1 = max(cx - hw, 0.0), min(cx + hw, float(w))
    ay0 = int(ny0 // MAX_STRIDE) * MAX_STRIDE
    ax0 = int(nx0 // MAX_STRIDE) * MAX_STRIDE
    ay1 = min(-int(-ny1 // MAX_STRIDE) * MAX_STRIDE, h)
    ax1 = min(-int(-nx1 // MAX_STRIDE) * MAX_STRIDE, w)
    return RoI(ax0, ay0, ax1, ay1)


def paste(full: Tensor, patch: Tensor, y0: int, x0: int) -> Tensor:
    """Overwrite a rectangle of `full` with `patch` (pure, differentiable)."""
    h, w, _ = full.shape
    ph, pw, _ = patch.shape
    strip = [patch]
    if x0 > 0:
        strip.insert(0, nm.slice_(full, [(y0, y0 + ph), (0, x0)]))
    if x0 + pw < w:
        strip.append(nm.slice_(full, [(y0, y0 + ph), (x0 + pw, w)]))
    mid = nm.concat(strip, axis=1) if len(strip) > 1 else strip[0]
    rows = [mid]
    if y0 > 0:
        rows.insert(0, nm.slice_(full, [(0, y0)]))
    if y0 + ph < h:
        rows.append(nm.slice_(full, [(y0 + ph, h)]))
    return nm.concat(rows, axis=0) if len(rows) > 1 else rows[0]


def _uper_head(grids, hw: HeadWeights, cfg: DecoderConfig) -> Tensor:
    h4 = grids[3]
    gh, gw = h4.shape[0], h4.shape[1]
    feats = [h4]
    for s, conv in zip(cfg.head_pool_sizes, hw.ppm):
        se = min(s, gh, gw)
        p = conv(nm.adaptive_avg_pool(h4, se, se))
        feats.append(nm.bilinear_resize(p, gh, gw))
    top = hw.bottleneck(nm.concat(feats, axis=2))
    pyramid = [None, None, None, top]
    for i in (2, 1, 0):
        lat = hw.lateral[i](grids[i])
        up = nm.bilinear_resize(pyramid[i + 1], lat.shape[0], lat.shape[1])
        pyramid[i] = hw.fpn[i](nm.add(lat, up))
    fh, fw = pyramid[0].shape[0], pyramid[0].shape[1]
    fused = nm.concat(
        [pyramid[0]] + [nm.bilinear_resize(pyramid[i], fh, fw) for i in (1, 2, 3)], axis=2)
    x = hw.fuse(fused)
    logits = nm.conv2d(x, hw.final_w, hw.final_b)
    return nm.bilinear_resize(logits, fh * 4, fw * 4)


def decode(fs: FeatureMapSet, f_c: Tensor, weights: DecoderWeights,
           roi: Optional[RoI] = None, probe: Optional[list] = None,
           stage_sink: Optional[list] = None) -> Tensor:
    """Full decoder forward pass; returns (padded_h, padded_w, 1) logits.

    Stage i starts from the click-carrying query grid (f_c at stage 1, the
    patch-merged grid after), cross-attends once against feature level i,
    then self-attends depths[i] times.  With a RoI, blocks at 1-based index
    >= zoomin_start[i] run on the stride-divided crop only and write back.

    `probe` collects key/value sequence lengths; `stage_sink` collects the
    four stage output grids.
    """
    cfg = weights.cfg
    if f_c.shape != fs.levels[0].shape:
        raise ValueError(f"click feature {f_c.shape} != F1 {fs.levels[0].shape}")
    if roi is not None:
        if roi.x1 > fs.padded_w or roi.y1 > fs.padded_h:
            raise ValueError(f"RoI {roi} outside padded frame "
                             f"({fs.padded_h},{fs.padded_w})")
    grid = f_c
    grids = []
    for i in range(4):
        fmap = fs.levels[i]
        if i > 0:
            grid = patch_merge(grid, weights.merges[i - 1])
        if grid.shape != fmap.shape:
            raise ValueError(f"stage {i + 1} grid {grid.shape} != feature {fmap.shape}")
        zs = cfg.zoomin_start[i] if (roi is not None and cfg.zoomin_start is not None) else None
        for j, blk in enumerate(weights.stages[i]):
            kv_map = fmap if j == 0 else grid
            if zs is not None and (j + 1) >= zs:
                stride = STRIDES[i]
                ry0, ry1 = roi.y0 // stride, roi.y1 // stride
                rx0, rx1 = roi.x0 // stride, roi.x1 // stride
                sub = nm.slice_(grid, [(ry0, ry1), (rx0, rx1)])
                kv_sub = sub if j > 0 else nm.slice_(kv_map, [(ry0, ry1), (rx0, rx1)])
                out = imsa_block(sub, kv_sub, blk, probe)
                grid = paste(grid, out, ry0, rx0)
            else:
                grid = imsa_block(grid, kv_map, blk, probe)
        grids.append(grid)
    if stage_sink is not None:
        stage_sink.extend(grids)
    return _uper_head(grids, weights.head, cfg)
