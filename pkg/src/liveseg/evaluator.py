"""Iterative click evaluation and the NoC / SPC / PIE metrics.

`evaluate_instance` drives any segmenter through the standard protocol:
click the center of the largest erroneous region, feed it to the model,
record IoU (on original, unpadded dims) and wall-clock latency, stop at
the target IoU or the click cap.  Per-click latency is measured around the
segmenter call only; preprocessing time is recorded separately so
seconds-per-click can be reported both with and without it amortized.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from liveseg.clickstate import apply_click, init_ref_mask
from liveseg.encoder import load_image, pad_to_multiple
from liveseg.trainer import next_click

MAX_CLICKS = 20


class SegmenterSession(Protocol):
    def click(self, x: int, y: int, positive: bool) -> np.ndarray: ...


class Segmenter(Protocol):
    def open(self, image: np.ndarray) -> SegmenterSession: ...


@dataclass
class EvalRecord:
    instance_id: str
    ious: list = field(default_factory=list)
    click_times: list = field(default_factory=list)   # seconds, one per click
    processed_pixels: int = 0                          # padded_h * padded_w
    preprocess_time: float = 0.0
    error: str = ""

    def spc(self, include_preprocess: bool) -> float:
        if not self.click_times:
            return 0.0
        total = sum(self.click_times)
        if include_preprocess:
            total += self.preprocess_time
        return total / len(self.click_times)


@dataclass
class MetricReport:
    noc: dict                 # threshold -> mean clicks (capped at MAX_CLICKS)
    spc: float                # seconds per click, preprocessing amortized
    spc_star: float           # seconds per click, decode only
    pie: float                # spc / mean processed pixels
    pie_star: float
    instances: int
    mean_pixels: float

    def to_dict(self) -> dict:
        return {
            **{f"noc@{t:g}": v for t, v in sorted(self.noc.items())},
            "spc": self.spc, "spc*": self.spc_star,
            "pie": self.pie, "pie*": self.pie_star,
            "instances": self.instances, "mean_pixels": self.mean_pixels,
        }

    def format_table(self) -> str:
        lines = [f"instances        {self.instances}"]
        for t, v in sorted(self.noc.items()):
            lines.append(f"NoC@{int(round(t * 100))}           {v:.2f}")
        lines.append(f"SPC              {self.spc:.4f} s")
        lines.append(f"SPC* (no prep)   {self.spc_star:.4f} s")
        lines.append(f"PIE              {self.pie * 1e7:.1f} e-7 s/px")
        lines.append(f"PIE* (no prep)   {self.pie_star * 1e7:.1f} e-7 s/px")
        return "\n".join(lines)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    a = a.astype(bool)
    b = b.astype(bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def evaluate_instance(segmenter: Segmenter, image: np.ndarray, gt: np.ndarray,
                      max_clicks: int = MAX_CLICKS, target_iou: float = 0.9,
                      instance_id: str = "") -> EvalRecord:
    """Run the click loop for one object; never raises on segmenter failure."""
    if not gt.any():
        raise ValueError("ground truth has no foreground")
    h, w = gt.shape
    ph, pw = pad_to_multiple(h, w)
    rec = EvalRecord(instance_id=instance_id, processed_pixels=ph * pw)
    t0 = time.perf_counter()
    try:
        session = segmenter.open(image)
    except Exception as e:  # noqa: BLE001 - failures become part of the record
        rec.error = f"open failed: {e}"
        return rec
    rec.preprocess_time = time.perf_counter() - t0

    shadow = init_ref_mask(h, w)  # evaluator-side click bookkeeping
    pred = np.zeros((h, w), dtype=bool)
    for _ in range(max_clicks):
        try:
            click = next_click(pred, gt, shadow)
        except ValueError:
            break  # prediction exactly matches gt outside pinned disks
        shadow = apply_click(shadow, click)
        t0 = time.perf_counter()
        try:
            mask = session.click(click.x, click.y, click.positive)
        except Exception as e:  # noqa: BLE001
            rec.error = f"click failed: {e}"
            return rec
        rec.click_times.append(time.perf_counter() - t0)
        pred = np.asarray(mask, dtype=bool)
        if pred.shape != gt.shape:
            rec.error = f"segmenter returned {pred.shape}, expected {gt.shape}"
            return rec
        rec.ious.append(iou(pred, gt))
        if rec.ious[-1] >= target_iou:
            break
    return rec


def noc(records: list[EvalRecord], threshold: float) -> float:
    """Mean clicks to reach the IoU threshold; misses count as MAX_CLICKS."""
    if not records:
        raise ValueError("no records")
    total = 0.0
    for r in records:
        hit = next((i + 1 for i, v in enumerate(r.ious) if v >= threshold), MAX_CLICKS)
        total += hit
    return total / len(records)


def pie(spc_seconds: float, pixels: int) -> float:
    """Pixel-wise inference efficiency: seconds per click per processed pixel."""
    if pixels <= 0:
        raise ValueError("pixel count must be positive")
    return spc_seconds / pixels


def summarize(records: list[EvalRecord], thresholds=(0.85, 0.9)) -> MetricReport:
    ok = [r for r in records if not r.error and r.ious]
    if not ok:
        raise ValueError("no successful records to summarize")
    spc = float(np.mean([r.spc(include_preprocess=True) for r in ok]))
    spc_star = float(np.mean([r.spc(include_preprocess=False) for r in ok]))
    mean_px = float(np.mean([r.processed_pixels for r in ok]))
    return MetricReport(
        noc={t: noc(ok, t) for t in thresholds},
        spc=spc, spc_star=spc_star,
        pie=pie(spc, mean_px), pie_star=pie(spc_star, mean_px),
        instances=len(ok), mean_pixels=mean_px,
    )


# --------------------------------------------------------------------------
# dataset loading

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".ppm", ".bmp")


@dataclass
class Instance:
    instance_id: str
    image: np.ndarray   # (H, W, 3) uint8
    gt: np.ndarray      # (H, W) bool


def load_dataset(directory) -> tuple[list[Instance], list[str]]:
    """Load (image, per-object mask) pairs: <name>.<ext> plus <name>_mask.png.

    Mask pixels hold small integer object ids; each nonzero id becomes one
    instance.  Per-file problems are reported, not fatal.
    """
    root = Path(directory)
    if not root.is_dir():
        raise ValueError(f"dataset directory {root} does not exist")
    instances: list[Instance] = []
    errors: list[str] = []
    images = sorted(p for p in root.iterdir()
                    if p.suffix.lower() in _IMAGE_SUFFIXES and not p.stem.endswith("_mask"))
    for img_path in images:
        mask_path = root / f"{img_path.stem}_mask.png"
        if not mask_path.exists():
            errors.append(f"{img_path.name}: missing mask file {mask_path.name}")
            continue
        try:
            image = load_image(str(img_path))
            from PIL import Image
            mask = np.asarray(Image.open(mask_path).convert("L"))
        except ValueError as e:
            errors.append(f"{img_path.name}: {e}")
            continue
        except OSError as e:
            errors.append(f"{img_path.name}: undecodable mask: {e}")
            continue
        if mask.shape != image.shape[:2]:
            errors.append(f"{img_path.name}: mask {mask.shape} != image {image.shape[:2]}")
            continue
        ids = sorted(int(v) for v in np.unique(mask) if v > 0)
        if not ids:
            errors.append(f"{img_path.name}: mask has no foreground objects")
            continue
        for obj in ids:
            instances.append(Instance(f"{img_path.stem}:{obj}", image, mask == obj))
    return instances, errors
