"""Offline feature encoding: plain ViT backbone plus a simple feature pyramid.

This is the heavy, cacheable half of the engine.  An image is normalized,
zero-padded bottom/right to a multiple of 32, run through a patch
transformer at stride 16, and fanned out into four feature levels at
strides 4/8/16/32 with channel counts C1, 2*C1, 4*C1, 8*C1.  Encoding is
deterministic and stateless given weights, so many images can be encoded
concurrently.

The default configuration is desk-scale (the interface is what matters;
capacity is swappable).  Full-size backbone weights can be imported
through the cache container format.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from liveseg import numerics as nm
from liveseg.numerics import Tensor

MAX_STRIDE = 32
STRIDES = (4, 8, 16, 32)

# standard ImageNet channel statistics
IMAGE_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGE_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass
class EncoderConfig:
    patch_size: int = 16
    embed_dim: int = 96      # C0
    depth: int = 4
    heads: int = 4
    base_channels: int = 32  # C1: channels of the stride-4 level
    pos_grid: int = 32       # side of the stored positional-embedding grid

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by {self.heads} heads")


class FeatureMapSet:
    """The four preprocessed feature maps plus the dims they were computed at."""

    __slots__ = ("levels", "original_h", "original_w", "padded_h", "padded_w")

    def __init__(self, levels, original_h, original_w, padded_h, padded_w):
        if len(levels) != 4:
            raise ValueError("expected exactly four feature levels")
        if padded_h % MAX_STRIDE or padded_w % MAX_STRIDE:
            raise ValueError(f"padded dims ({padded_h},{padded_w}) not multiples of {MAX_STRIDE}")
        if not (0 < original_h <= padded_h and 0 < original_w <= padded_w):
            raise ValueError("original dims must be positive and inside padded dims")
        c1 = levels[0].shape[2]
        for i, (lvl, stride) in enumerate(zip(levels, STRIDES)):
            want = (padded_h // stride, padded_w // stride, c1 * (2 ** i))
            if lvl.shape != want:
                raise ValueError(f"level {i + 1} shape {lvl.shape} violates shape law {want}")
        self.levels = tuple(levels)
        self.original_h = original_h
        self.original_w = original_w
        self.padded_h = padded_h
        self.padded_w = padded_w

    @property
    def base_channels(self) -> int:
        return self.levels[0].shape[2]


def pad_to_multiple(h: int, w: int, multiple: int = MAX_STRIDE) -> tuple[int, int]:
    return (-(-h // multiple) * multiple, -(-w // multiple) * multiple)


def load_image(source) -> np.ndarray:
    """Decode a PNG/PPM/JPEG file path or bytes into an RGB uint8 array."""
    try:
        if isinstance(source, (bytes, bytearray)):
            img = Image.open(io.BytesIO(source))
        else:
            img = Image.open(source)
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise ValueError(f"cannot decode image: {e}") from e
    if arr.size == 0:
        raise ValueError("zero-area image")
    return arr


def normalize_image(rgb: np.ndarray) -> np.ndarray:
    """uint8 or [0,1] float RGB to zero-mean/unit-variance float32."""
    arr = np.asarray(rgb)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    return ((arr - IMAGE_MEAN) / IMAGE_STD).astype(np.float32)


# --------------------------------------------------------------------------
# weights

def _lin(rng, fan_in, fan_out, std=0.02, dtype=np.float32):
    return Tensor(rng.normal(0.0, std, size=(fan_in, fan_out)).astype(dtype))


def _zeros(*shape, dtype=np.float32):
    return Tensor(np.zeros(shape, dtype=dtype))


def _ones(*shape, dtype=np.float32):
    return Tensor(np.ones(shape, dtype=dtype))


def _conv(rng, kh, kw, cin, cout, dtype=np.float32):
    std = float(np.sqrt(2.0 / (kh * kw * cin)))
    return Tensor(rng.normal(0.0, std, size=(kh, kw, cin, cout)).astype(dtype))


class ViTBlock:
    def __init__(self, rng, dim, dtype=np.float32):
        self.ln1_s, self.ln1_b = _ones(dim, dtype=dtype), _zeros(dim, dtype=dtype)
        self.wq, self.bq = _lin(rng, dim, dim, dtype=dtype), _zeros(dim, dtype=dtype)
        self.wk, self.bk = _lin(rng, dim, dim, dtype=dtype), _zeros(dim, dtype=dtype)
        self.wv, self.bv = _lin(rng, dim, dim, dtype=dtype), _zeros(dim, dtype=dtype)
        self.wo, self.bo = _lin(rng, dim, dim, dtype=dtype), _zeros(dim, dtype=dtype)
        self.ln2_s, self.ln2_b = _ones(dim, dtype=dtype), _zeros(dim, dtype=dtype)
        self.w1, self.b1 = _lin(rng, dim, 4 * dim, dtype=dtype), _zeros(4 * dim, dtype=dtype)
        self.w2, self.b2 = _lin(rng, 4 * dim, dim, dtype=dtype), _zeros(dim, dtype=dtype)

    def named_params(self, prefix):
        for name in ("ln1_s", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                     "ln2_s", "ln2_b", "w1", "b1", "w2", "b2"):
            yield f"{prefix}/{name}", getattr(self, name)

    def forward(self, x: Tensor, heads: int) -> Tensor:
        h = nm.layer_norm(x, self.ln1_s, self.ln1_b)
        q = nm.linear(h, self.wq, self.bq)
        k = nm.linear(h, self.wk, self.bk)
        v = nm.linear(h, self.wv, self.bv)
        x = nm.add(x, nm.linear(nm.attention(q, k, v, heads), self.wo, self.bo))
        h2 = nm.layer_norm(x, self.ln2_s, self.ln2_b)
        mlp = nm.linear(nm.gelu(nm.linear(h2, self.w1, self.b1)), self.w2, self.b2)
        return nm.add(x, mlp)


class ViTEncoder:
    """Plain pre-norm patch transformer producing a stride-16 feature grid."""

    def __init__(self, cfg: EncoderConfig, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        p, d = cfg.patch_size, cfg.embed_dim
        self.patch_w = _lin(rng, p * p * 3, d, std=float(np.sqrt(1.0 / (p * p * 3))), dtype=dtype)
        self.patch_b = _zeros(d, dtype=dtype)
        self.pos = Tensor(rng.normal(0.0, 0.02,
                                     size=(cfg.pos_grid, cfg.pos_grid, d)).astype(dtype))
        self.blocks = [ViTBlock(rng, d, dtype=dtype) for _ in range(cfg.depth)]
        self.ln_s, self.ln_b = _ones(d, dtype=dtype), _zeros(d, dtype=dtype)

    def named_params(self, prefix="vit"):
        yield f"{prefix}/patch_w", self.patch_w
        yield f"{prefix}/patch_b", self.patch_b
        yield f"{prefix}/pos", self.pos
        for i, blk in enumerate(self.blocks):
            yield from blk.named_params(f"{prefix}/block{i}")
        yield f"{prefix}/ln_s", self.ln_s
        yield f"{prefix}/ln_b", self.ln_b


def resize_pos_embed(pos: Tensor, new_gh: int, new_gw: int) -> Tensor:
    """Bilinearly rescale the 2-D positional grid; identity at matching size."""
    if pos.shape[0] == new_gh and pos.shape[1] == new_gw:
        return pos
    return nm.bilinear_resize(pos, new_gh, new_gw)


def vit_forward(image: Tensor, enc: ViTEncoder) -> Tensor:
    """Run the patch transformer; (H, W, 3) in, (H/16, W/16, C0) out."""
    cfg = enc.cfg
    h, w, _ = image.shape
    p = cfg.patch_size
    if h % p or w % p:
        raise ValueError(f"image dims ({h},{w}) not divisible by patch size {p}")
    gh, gw = h // p, w // p
    patches = nm.reshape(
        nm.transpose(nm.reshape(image, (gh, p, gw, p, 3)), (0, 2, 1, 3, 4)),
        (gh * gw, p * p * 3))
    tokens = nm.linear(patches, enc.patch_w, enc.patch_b)
    pos = nm.reshape(resize_pos_embed(enc.pos, gh, gw), (gh * gw, cfg.embed_dim))
    x = nm.add(tokens, pos)
    for blk in enc.blocks:
        x = blk.forward(x, cfg.heads)
    x = nm.layer_norm(x, enc.ln_s, enc.ln_b)
    return nm.reshape(x, (gh, gw, cfg.embed_dim))


class SimpleFPN:
    """Four feature levels from the single stride-16 grid.

    Stride 4 comes from two 2x transposed-conv stages (group-norm + gelu in
    between), stride 8 from one, stride 16 is the grid itself, stride 32 is
    max-pooled.  Each branch ends in 1x1 and 3x3 projection convolutions to
    the target channel count.
    """

    def __init__(self, cfg: EncoderConfig, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(1)
        self.cfg = cfg
        d, c1 = cfg.embed_dim, cfg.base_channels
        half, quarter = d // 2, d // 4
        self.up4_a = Tensor(rng.normal(0, np.sqrt(1.0 / d), (2, 2, d, half)).astype(dtype))
        self.up4_gn_s, self.up4_gn_b = _ones(half, dtype=dtype), _zeros(half, dtype=dtype)
        self.up4_b = Tensor(rng.normal(0, np.sqrt(1.0 / half), (2, 2, half, quarter)).astype(dtype))
        self.up8 = Tensor(rng.normal(0, np.sqrt(1.0 / d), (2, 2, d, half)).astype(dtype))
        src = (quarter, half, d, d)
        self.proj = []
        for i, cin in enumerate(src):
            cout = c1 * (2 ** i)
            self.proj.append({
                "c1": _conv(rng, 1, 1, cin, cout, dtype=dtype),
                "g1s": _ones(cout, dtype=dtype), "g1b": _zeros(cout, dtype=dtype),
                "c3": _conv(rng, 3, 3, cout, cout, dtype=dtype),
                "g2s": _ones(cout, dtype=dtype), "g2b": _zeros(cout, dtype=dtype),
            })

    def named_params(self, prefix="fpn"):
        yield f"{prefix}/up4_a", self.up4_a
        yield f"{prefix}/up4_gn_s", self.up4_gn_s
        yield f"{prefix}/up4_gn_b", self.up4_gn_b
        yield f"{prefix}/up4_b", self.up4_b
        yield f"{prefix}/up8", self.up8
        for i, p in enumerate(self.proj):
            for k, t in p.items():
                yield f"{prefix}/proj{i}/{k}", t

    def _project(self, x: Tensor, i: int) -> Tensor:
        p = self.proj[i]
        x = nm.gelu(nm.group_norm(nm.conv2d(x, p["c1"]), p["g1s"], p["g1b"]))
        return nm.group_norm(nm.conv2d(x, p["c3"]), p["g2s"], p["g2b"])


def simple_fpn(grid: Tensor, fpn: SimpleFPN) -> list[Tensor]:
    """Expand the stride-16 grid into the four pyramid levels."""
    up_half = nm.gelu(nm.group_norm(nm.upconv2x(grid, fpn.up4_a), fpn.up4_gn_s, fpn.up4_gn_b))
    s4 = nm.upconv2x(up_half, fpn.up4_b)
    s8 = nm.upconv2x(grid, fpn.up8)
    s16 = grid
    s32 = nm.max_pool(grid, 2)
    return [fpn._project(x, i) for i, x in enumerate((s4, s8, s16, s32))]


def preprocess_image(image, vit: ViTEncoder, fpn: SimpleFPN) -> FeatureMapSet:
    """Full offline pipeline: decode/normalize, pad, encode, build the pyramid."""
    if isinstance(image, (bytes, bytearray, str)):
        image = load_image(image)
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.size == 0:
        raise ValueError(f"expected (H, W, 3) RGB image, got shape {arr.shape}")
    h, w = arr.shape[:2]
    ph, pw = pad_to_multiple(h, w)
    normed = normalize_image(arr)
    padded = np.zeros((ph, pw, 3), dtype=np.float32)
    padded[:h, :w] = normed
    grid = vit_forward(Tensor(padded), vit)
    levels = simple_fpn(grid, fpn)
    return FeatureMapSet(levels, h, w, ph, pw)
