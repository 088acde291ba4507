"""Command-line front: preprocess, serve, eval, train, bench, dump-config.

Configuration is a flat key=value text format; every numeric field of the
encoder/decoder/training configs can be set from a file (--config) or
repeated --set flags.  The model preset picks the published stage depths:
light = 0,0,1,0 (no zoom crops), tiny = 1,1,5,2 with zoom starting at
blocks 2,2,3,2.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

import liveseg
from liveseg.cachefile import CacheFormatError
from liveseg.decoder import DecoderConfig
from liveseg.encoder import EncoderConfig, load_image
from liveseg.evaluator import evaluate_instance, load_dataset, summarize
from liveseg.model import (
    PRESETS,
    ModelBundle,
    build_model,
    load_checkpoint,
    preset_decoder_config,
    save_checkpoint,
)
from liveseg.session import Engine, EngineSegmenter
from liveseg.trainer import TrainConfig, synth_sample, train


@dataclasses.dataclass
class RunConfig:
    preset: str = "tiny"
    zoom: bool = True
    thresholds: tuple = (0.85, 0.9)
    enc: EncoderConfig = dataclasses.field(default_factory=EncoderConfig)
    dec_overrides: dict = dataclasses.field(default_factory=dict)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)

    def decoder_config(self) -> DecoderConfig:
        return preset_decoder_config(self.preset, base_channels=self.enc.base_channels,
                                     **self.dec_overrides)

    def build(self, seed: int | None = None) -> ModelBundle:
        return build_model(self.enc, self.decoder_config(),
                           seed=self.train.seed if seed is None else seed)


_INT_TUPLE_KEYS = {"depths", "pool_sizes", "zoomin_start", "head_pool_sizes"}


def _parse_value(field_type, raw: str):
    if field_type is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return field_type(raw)


def _fmt_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(f"{x:g}" if isinstance(x, float) else str(x) for x in v)
    if isinstance(v, float):
        return f"{v:g}"
    return str(v)


def config_to_text(cfg: RunConfig) -> str:
    """Flat key=value dump; parsing it back is a fixed point."""
    lines = [f"preset={cfg.preset}", f"zoom={_fmt_value(cfg.zoom)}",
             f"thresholds={_fmt_value(cfg.thresholds)}"]
    for f in dataclasses.fields(EncoderConfig):
        lines.append(f"enc.{f.name}={_fmt_value(getattr(cfg.enc, f.name))}")
    dec = cfg.decoder_config()
    for f in dataclasses.fields(DecoderConfig):
        lines.append(f"dec.{f.name}={_fmt_value(getattr(dec, f.name))}")
    for f in dataclasses.fields(TrainConfig):
        lines.append(f"train.{f.name}={_fmt_value(getattr(cfg.train, f.name))}")
    return "\n".join(sorted(lines)) + "\n"


def apply_setting(cfg: RunConfig, key: str, raw: str) -> None:
    key = key.strip()
    raw = raw.strip()
    if key == "preset":
        if raw not in PRESETS:
            raise ValueError(f"unknown preset {raw!r}; choose from {sorted(PRESETS)}")
        cfg.preset = raw
        return
    if key == "zoom":
        cfg.zoom = _parse_value(bool, raw)
        return
    if key == "thresholds":
        cfg.thresholds = tuple(float(x) for x in raw.split(",") if x)
        return
    if key.startswith("enc."):
        name = key[4:]
        fields = {f.name: f for f in dataclasses.fields(EncoderConfig)}
        if name not in fields:
            raise ValueError(f"unknown encoder field {name!r}")
        val = int(raw)
        cfg.enc = dataclasses.replace(cfg.enc, **{name: val})
        return
    if key.startswith("dec."):
        name = key[4:]
        fields = {f.name: f for f in dataclasses.fields(DecoderConfig)}
        if name not in fields:
            raise ValueError(f"unknown decoder field {name!r}")
        if name in _INT_TUPLE_KEYS:
            val = tuple(int(x) for x in raw.split(",") if x) if raw else None
        elif name == "roi_expand":
            val = float(raw)
        else:
            val = int(raw)
        if name == "base_channels":
            cfg.enc = dataclasses.replace(cfg.enc, base_channels=val)
        else:
            cfg.dec_overrides[name] = val
        return
    if key.startswith("train."):
        name = key[6:]
        fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
        if name not in fields:
            raise ValueError(f"unknown training field {name!r}")
        ftype = fields[name].type
        if name in ("gamma_sim", "focal_gamma", "lr", "weight_decay", "lr_decay_power"):
            val = float(raw)
        elif name == "train_encoder":
            val = _parse_value(bool, raw)
        else:
            val = int(raw)
        cfg.train = dataclasses.replace(cfg.train, **{name: val})
        return
    raise ValueError(f"unknown config key {key!r}")


def load_config(path: str | None, sets: list[str] | None,
                preset: str | None = None) -> RunConfig:
    cfg = RunConfig()
    entries: list[tuple[str, str]] = []
    if path:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            k, v = line.split("=", 1)
            entries.append((k, v))
    # preset first so later keys override what it expands to
    entries.sort(key=lambda kv: kv[0] != "preset")
    for k, v in entries:
        apply_setting(cfg, k, v)
    if preset:
        apply_setting(cfg, "preset", preset)
    for s in sets or []:
        if "=" not in s:
            raise ValueError(f"--set expects key=value, got {s!r}")
        k, v = s.split("=", 1)
        apply_setting(cfg, k, v)
    return cfg


def _load_or_build(weights: str | None, cfg: RunConfig) -> ModelBundle:
    if weights:
        return load_checkpoint(weights)
    print("note: no --weights given, using randomly initialized model", file=sys.stderr)
    return cfg.build()


# --------------------------------------------------------------------------
# subcommands

def cmd_preprocess(args) -> int:
    cfg = load_config(args.config, args.set, args.preset)
    bundle = _load_or_build(args.weights, cfg)
    engine = Engine(bundle, cache_dir=args.cache_dir, zoom=False)
    img_dir = Path(args.img_dir)
    exts = (".png", ".jpg", ".jpeg", ".ppm", ".bmp")
    files = sorted(p for p in img_dir.iterdir()
                   if p.suffix.lower() in exts and not p.stem.endswith("_mask"))
    if not files:
        print(f"no images found in {img_dir}", file=sys.stderr)
        return 1
    failures = 0
    for p in files:
        t0 = time.perf_counter()
        try:
            engine.encode_to_cache(p.stem, load_image(str(p)))
        except (ValueError, CacheFormatError) as e:
            print(f"{p.name}: ERROR {e}", file=sys.stderr)
            failures += 1
            continue
        print(f"{p.name}: cached in {time.perf_counter() - t0:.2f}s")
    return 1 if failures else 0


def cmd_serve(args) -> int:
    from liveseg.service import serve

    cfg = load_config(args.config, args.set, None)
    bundle = _load_or_build(args.weights, cfg)
    engine = Engine(bundle, cache_dir=args.cache, zoom=cfg.zoom)
    serve(engine, host=args.host, port=args.port, frontend_dir=args.frontend)
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set, args.preset)
    if args.thresholds:
        cfg.thresholds = tuple(float(x) for x in args.thresholds.split(","))
    bundle = _load_or_build(args.weights, cfg)
    engine = Engine(bundle, zoom=cfg.zoom)
    segmenter = EngineSegmenter(engine)
    instances, errors = load_dataset(args.dataset)
    for e in errors:
        print(f"dataset: {e}", file=sys.stderr)
    if not instances:
        print("no usable instances", file=sys.stderr)
        return 1
    target = max(cfg.thresholds)

    def run_one(inst):
        return evaluate_instance(segmenter, inst.image, inst.gt,
                                 max_clicks=args.max_clicks, target_iou=target,
                                 instance_id=inst.instance_id)

    if args.workers > 1:
        # concurrent instances skew per-click wall times; use workers=1 when
        # the timing columns matter
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            records = list(pool.map(run_one, instances))
    else:
        records = [run_one(inst) for inst in instances]
    out_stream = open(args.records, "w") if args.records else None
    for rec in records:
        line = {"instance": rec.instance_id, "ious": rec.ious,
                "click_times_s": rec.click_times, "pixels": rec.processed_pixels,
                "preprocess_s": rec.preprocess_time, "error": rec.error}
        if out_stream:
            out_stream.write(json.dumps(line) + "\n")
        else:
            print(json.dumps(line))
    if out_stream:
        out_stream.close()
    report = summarize(records, cfg.thresholds)
    print(report.format_table())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
        print(f"report written to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set, args.preset)
    if args.steps is not None:
        cfg.train = dataclasses.replace(cfg.train, steps=args.steps)
    bundle = cfg.build()
    log_stream = open(args.log, "w") if args.log else sys.stdout

    def log(entry: dict) -> None:
        log_stream.write(json.dumps(entry) + "\n")
        if args.log and entry["step"] % 100 == 0:
            print(f"step {entry['step']}: loss {entry['loss']:.4f}")

    try:
        train(bundle, cfg.train, log=log)
    finally:
        if args.log:
            log_stream.close()
    save_checkpoint(bundle, args.out, extra_meta={"preset": cfg.preset})
    print(f"checkpoint written to {args.out}")
    return 0


def bench_run(bundle: ModelBundle, size: int, clicks: int, zoom: bool,
              seed: int = 0) -> dict:
    """Timed click loop on one synthetic instance; returns latency metrics."""
    sample = synth_sample(np.random.default_rng(seed), size, size)
    engine = Engine(bundle, zoom=zoom)
    rec = evaluate_instance(EngineSegmenter(engine), sample.image, sample.gt,
                            max_clicks=clicks, target_iou=1.01)
    if rec.error:
        raise RuntimeError(f"bench failed: {rec.error}")
    px = rec.processed_pixels
    return {
        "mode": "zoom" if zoom else "nozoom",
        "size": size,
        "clicks": len(rec.click_times),
        "median_click_s": float(np.median(rec.click_times)),
        "spc": rec.spc(include_preprocess=True),
        "spc_star": rec.spc(include_preprocess=False),
        "pie": rec.spc(True) / px,
        "pie_star": rec.spc(False) / px,
        "preprocess_s": rec.preprocess_time,
    }


def cmd_bench(args) -> int:
    cfg = load_config(args.config, args.set, args.preset)
    bundle = _load_or_build(args.weights, cfg)
    modes = [True, False] if (cfg.zoom and bundle.dec_cfg.zoomin_start) else [False]
    rows = []
    for zoom in modes:
        r = bench_run(bundle, args.size, args.clicks, zoom, seed=args.seed)
        rows.append(r)
        print(f"mode={r['mode']:<7} size={r['size']} clicks={r['clicks']} "
              f"median_click_s={r['median_click_s']:.3f} "
              f"spc={r['spc']:.3f} spc*={r['spc_star']:.3f} "
              f"pie={r['pie'] * 1e7:.1f}e-7 pie*={r['pie_star'] * 1e7:.1f}e-7")
    print(f"note: pie = spc / {args.size}^2 pixels (padded)")
    if args.json:
        Path(args.json).write_text(json.dumps(rows, indent=2) + "\n")
    return 0


def cmd_dump_config(args) -> int:
    cfg = load_config(args.config, args.set, args.preset)
    sys.stdout.write(config_to_text(cfg))
    return 0


def _add_common(p, with_preset=True):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    if with_preset:
        p.add_argument("--preset", choices=sorted(PRESETS))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="liveseg",
                                 description="CPU-first interactive segmentation engine")
    ap.add_argument("--version", action="version", version=liveseg.__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="encode a directory of images into feature caches")
    p.add_argument("img_dir")
    p.add_argument("cache_dir")
    p.add_argument("--weights")
    _add_common(p)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("serve", help="run the annotation service")
    p.add_argument("--cache", required=True)
    p.add_argument("--weights")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--frontend", help="static UI directory to mount at /ui")
    _add_common(p, with_preset=False)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("eval", help="run the click protocol over a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--weights")
    p.add_argument("--thresholds", default="0.85,0.9")
    p.add_argument("--max-clicks", type=int, default=20)
    p.add_argument("--workers", type=int, default=1,
                   help="concurrent instances; keep 1 for trustworthy timings")
    p.add_argument("--records", help="write per-instance JSONL here instead of stdout")
    p.add_argument("--out", help="write the summary report JSON here")
    _add_common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("train", help="desk-scale training on synthetic shapes")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--steps", type=int)
    p.add_argument("--log", help="write JSONL training log here")
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("bench", help="measure per-click latency, SPC and PIE")
    p.add_argument("--weights")
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--clicks", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="write results JSON here")
    _add_common(p)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("dump-config", help="print the effective flat config")
    _add_common(p)
    p.set_defaults(fn=cmd_dump_config)

    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, CacheFormatError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
