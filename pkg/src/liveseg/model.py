"""Model assembly: encoder + click embedding + decoder, with checkpoint IO.

Checkpoints are cache-container files holding every named parameter plus a
flat key=value config block, so a file is self-describing: `load_checkpoint`
rebuilds the exact architecture and then loads tensors shape-checked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from liveseg.cachefile import CacheFormatError, weights_read, weights_write
from liveseg.clickstate import ClickEmbeddingTable
from liveseg.decoder import DecoderConfig, DecoderWeights
from liveseg.encoder import EncoderConfig, FeatureMapSet, SimpleFPN, ViTEncoder, preprocess_image

PRESETS = {
    "light": {"depths": (0, 0, 1, 0), "zoomin_start": None},
    "tiny": {"depths": (1, 1, 5, 2), "zoomin_start": (2, 2, 3, 2)},
}


@dataclass
class ModelBundle:
    enc_cfg: EncoderConfig
    dec_cfg: DecoderConfig
    vit: ViTEncoder
    fpn: SimpleFPN
    table: ClickEmbeddingTable
    decoder: DecoderWeights

    def named_params(self, include_encoder: bool = True):
        if include_encoder:
            yield from self.vit.named_params("vit")
            yield from self.fpn.named_params("fpn")
        yield from self.table.named_params("click_table")
        yield from self.decoder.named_params("decoder")

    def encode(self, image) -> FeatureMapSet:
        return preprocess_image(image, self.vit, self.fpn)


def build_model(enc_cfg: EncoderConfig, dec_cfg: DecoderConfig, seed: int = 0,
                dtype=np.float32) -> ModelBundle:
    if enc_cfg.base_channels != dec_cfg.base_channels:
        raise ValueError(
            f"encoder C1 {enc_cfg.base_channels} != decoder C1 {dec_cfg.base_channels}")
    rng = np.random.default_rng(seed)
    return ModelBundle(
        enc_cfg=enc_cfg,
        dec_cfg=dec_cfg,
        vit=ViTEncoder(enc_cfg, rng, dtype=dtype),
        fpn=SimpleFPN(enc_cfg, rng, dtype=dtype),
        table=ClickEmbeddingTable(dec_cfg.base_channels, dtype=dtype),
        decoder=DecoderWeights(dec_cfg, rng, dtype=dtype),
    )


def preset_decoder_config(name: str, base_channels: int = 32, **overrides) -> DecoderConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kw = dict(PRESETS[name])
    kw["base_channels"] = base_channels
    kw.update(overrides)
    return DecoderConfig(**kw)


# --------------------------------------------------------------------------
# config <-> flat text

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def configs_to_meta(enc: EncoderConfig, dec: DecoderConfig) -> dict[str, str]:
    pairs = {}
    for k, v in vars(enc).items():
        pairs[f"enc.{k}"] = _fmt(v)
    for k, v in vars(dec).items():
        pairs[f"dec.{k}"] = _fmt(v)
    return pairs


def _parse_tuple(s: str):
    return None if s == "" else tuple(int(x) for x in s.split(","))


def configs_from_meta(meta: dict[str, str]) -> tuple[EncoderConfig, DecoderConfig]:
    def get(k, conv, default):
        return conv(meta[k]) if k in meta else default

    enc = EncoderConfig(
        patch_size=get("enc.patch_size", int, 16),
        embed_dim=get("enc.embed_dim", int, 96),
        depth=get("enc.depth", int, 4),
        heads=get("enc.heads", int, 4),
        base_channels=get("enc.base_channels", int, 32),
        pos_grid=get("enc.pos_grid", int, 32),
    )
    dec = DecoderConfig(
        depths=get("dec.depths", _parse_tuple, (1, 1, 5, 2)),
        base_channels=get("dec.base_channels", int, enc.base_channels),
        pool_sizes=get("dec.pool_sizes", _parse_tuple, (1, 2, 3, 6)),
        zoomin_start=get("dec.zoomin_start", _parse_tuple, None),
        head_channels=get("dec.head_channels", int, 64),
        head_pool_sizes=get("dec.head_pool_sizes", _parse_tuple, (1, 2, 3, 6)),
        roi_expand=get("dec.roi_expand", float, 1.4),
    )
    return enc, dec


def save_checkpoint(bundle: ModelBundle, path: str, extra_meta: dict | None = None) -> None:
    named = {name: t.data for name, t in bundle.named_params(include_encoder=True)}
    meta = configs_to_meta(bundle.enc_cfg, bundle.dec_cfg)
    meta.update(extra_meta or {})
    weights_write(named, path, meta)


def load_checkpoint(path: str) -> ModelBundle:
    tensors, meta = weights_read(path)
    enc_cfg, dec_cfg = configs_from_meta(meta)
    bundle = build_model(enc_cfg, dec_cfg)
    loaded = set()
    for name, t in bundle.named_params(include_encoder=True):
        if name not in tensors:
            raise CacheFormatError(f"{path}: missing tensor {name!r}")
        arr = tensors[name]
        if arr.shape != t.shape:
            raise CacheFormatError(
                f"{path}: tensor {name!r} has shape {arr.shape}, expected {t.shape}")
        t.assign_(arr)
        loaded.add(name)
    extra = set(tensors) - loaded
    if extra:
        raise CacheFormatError(f"{path}: unexpected tensors {sorted(extra)[:4]}")
    return bundle
