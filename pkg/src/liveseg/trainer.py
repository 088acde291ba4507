"""Desk-scale training: click simulation, focal supervision, AdamW.

Each training step rolls the interaction forward a sampled number of
rounds without recording gradients: place a click at the center of the
largest erroneous region, stamp it into the reference mask, fold in the
previous prediction, run the decoder.  Only the final forward pass runs on
the tape and gets supervised with a normalized focal loss, so memory stays
flat in the number of rounds.

Synthetic colored-shape samples stand in for a real dataset; acceptance
targets learnability of the mechanism, not benchmark parity.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from liveseg import numerics as nm
from liveseg.clickstate import (
    Click,
    Label,
    RefMask,
    apply_click,
    click_feature,
    init_ref_mask,
    merge_prediction,
)
from liveseg.decoder import decode
from liveseg.model import ModelBundle
from liveseg.numerics import GradientTape, Tensor, gradients

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass
class TrainConfig:
    gamma_sim: float = 0.6     # decay ratio for the number of pre-interactions
    max_rounds: int = 20
    focal_gamma: float = 2.0
    lr: float = 3e-3
    steps: int = 2000
    batch: int = 1
    seed: int = 0
    image_size: int = 96
    weight_decay: float = 0.01
    train_encoder: bool = True
    lr_decay_power: float = 0.9   # polynomial decay to 0; 0 = constant lr

    def __post_init__(self):
        if not (0.0 < self.gamma_sim < 1.0):
            raise ValueError(f"gamma_sim must be in (0,1), got {self.gamma_sim}")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")


@dataclass
class SynthSample:
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    gt: np.ndarray     # (H, W) bool, at least one fg and one bg pixel


def simulate_rounds(rng: np.random.Generator, cfg: TrainConfig) -> int:
    """Sample the interaction count: P(n) proportional to gamma^(n-1), n in 1..max."""
    g = cfg.gamma_sim
    probs = g ** np.arange(cfg.max_rounds)
    probs /= probs.sum()
    return int(rng.choice(cfg.max_rounds, p=probs)) + 1


def next_click(pred: np.ndarray, gt: np.ndarray, m: RefMask) -> Click:
    """Click the interior center of the largest erroneous region.

    False-negative and false-positive regions are labeled separately
    (4-connectivity); the winner is the biggest region overall.  The click
    lands on the pixel deepest inside it (euclidean distance to the region
    boundary, image border counts as boundary), ties broken by smallest
    (y, x).  Pixels already pinned by a correct-polarity click disk are not
    errors worth clicking.
    """
    if pred.shape != gt.shape or pred.shape != m.shape:
        raise ValueError("pred/gt/mask shape mismatch")
    err = pred ^ gt
    err &= ~((m.labels == Label.D_FG) & gt)
    err &= ~((m.labels == Label.D_BG) & ~gt)
    if not err.any():
        raise ValueError("no erroneous pixels to click")
    best = None  # (size, is_fn, component mask)
    for is_fn, region in ((True, err & gt), (False, err & ~gt)):
        if not region.any():
            continue
        labels, n = ndimage.label(region, structure=_FOUR_CONN)
        if n == 0:
            continue
        sizes = np.bincount(labels.ravel())[1:]
        k = int(sizes.argmax()) + 1
        size = int(sizes[k - 1])
        if best is None or size > best[0]:
            best = (size, is_fn, labels == k)
    _, is_fn, comp = best
    padded = np.pad(comp, 1)
    dist = ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
    dist[~comp] = -1.0
    flat = int(np.argmax(dist))  # first max in row-major order = smallest (y, x)
    y, x = divmod(flat, comp.shape[1])
    return Click(x=int(x), y=int(y), positive=bool(is_fn))


def nfl_loss(logits: Tensor, gt: np.ndarray, focal_gamma: float = 2.0,
             normalizer: Optional[float] = None) -> Tensor:
    """Normalized focal loss over per-pixel logits.

    p is the probability assigned to the true class; each term is weighted
    by (1-p)^gamma and the sum is divided by the total focal weight, which
    is held constant under differentiation.  Passing `normalizer` pins that
    constant explicitly (finite-difference oracles need this to probe the
    same function the gradient is taken of).
    """
    if logits.size != gt.size:
        raise ValueError(f"logits size {logits.size} != gt size {gt.size}")
    n = logits.size
    z = nm.reshape(logits, (n,))
    sign = Tensor(np.where(gt.ravel(), 1.0, -1.0), dtype=logits.dtype)
    p = nm.sigmoid(nm.mul(z, sign))
    one_minus = nm.sub(1.0, p)
    if focal_gamma == 0.0:
        weights = nm.add(nm.scale(one_minus, 0.0), 1.0)
    else:
        weights = nm.power(one_minus, focal_gamma)
    num = nm.reduce_sum(nm.mul(weights, nm.log(p)))
    if normalizer is None:
        denom = nm.add(nm.stop_gradient(nm.reduce_sum(weights)), 1e-12)
    else:
        denom = Tensor(np.asarray(normalizer), dtype=logits.dtype)
    return nm.scale(nm.div(num, denom), -1.0)


def nfl_normalizer(logits: Tensor, gt: np.ndarray, focal_gamma: float = 2.0) -> float:
    """The focal-weight sum the loss divides by, evaluated at this point."""
    z = logits.data.reshape(-1)
    s = np.where(gt.ravel(), 1.0, -1.0)
    p = 1.0 / (1.0 + np.exp(-s * z))
    if focal_gamma == 0.0:
        return float(p.size) + 1e-12
    return float(((1.0 - p) ** focal_gamma).sum()) + 1e-12


class AdamW:
    """Decoupled weight decay Adam; updates swap parameter arrays in place."""

    def __init__(self, params: list[Tensor], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.assign_(p.data - self.lr * (update + self.wd * p.data))


# --------------------------------------------------------------------------
# synthetic data

def _smooth_noise(rng, h, w, cells, lo, hi):
    coarse = rng.uniform(lo, hi, size=(cells, cells, 3)).astype(np.float32)
    return nm.bilinear_resize(Tensor(coarse), h, w).data.copy()


def _ellipse_mask(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    cy = rng.uniform(0.25 * h, 0.75 * h)
    cx = rng.uniform(0.25 * w, 0.75 * w)
    ry = rng.uniform(0.14 * h, 0.34 * h)
    rx = rng.uniform(0.14 * w, 0.34 * w)
    theta = rng.uniform(0, np.pi)
    ct, st = np.cos(theta), np.sin(theta)
    u = (xx - cx) * ct + (yy - cy) * st
    v = -(xx - cx) * st + (yy - cy) * ct
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _polygon_mask(rng, h, w):
    # convex polygon: random points around a center, sorted by angle, kept
    # convex by construction of half-plane intersection
    k = int(rng.integers(3, 7))
    cy = rng.uniform(0.3 * h, 0.7 * h)
    cx = rng.uniform(0.3 * w, 0.7 * w)
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=k))
    radii = rng.uniform(0.15, 0.4, size=k) * min(h, w)
    pys = cy + radii * np.sin(angles)
    pxs = cx + radii * np.cos(angles)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    inside = np.ones((h, w), dtype=bool)
    for i in range(k):
        y0, x0 = pys[i], pxs[i]
        y1, x1 = pys[(i + 1) % k], pxs[(i + 1) % k]
        cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
        inside &= cross >= 0
    return inside


def synth_sample(rng: np.random.Generator, h: int, w: int) -> SynthSample:
    """Colored shapes on a textured background; gt is the union of shapes."""
    if h < 64 or w < 64:
        raise ValueError("synthetic samples need h, w >= 64")
    for _ in range(64):
        image = _smooth_noise(rng, h, w, cells=4, lo=0.2, hi=0.8)
        gt = np.zeros((h, w), dtype=bool)
        n_shapes = int(rng.integers(1, 4))
        for _ in range(n_shapes):
            mask = _ellipse_mask(rng, h, w) if rng.random() < 0.6 else _polygon_mask(rng, h, w)
            bg_mean = image[..., :].mean(axis=(0, 1))
            color = np.clip(bg_mean + rng.choice([-1.0, 1.0], size=3)
                            * rng.uniform(0.35, 0.65, size=3), 0.0, 1.0).astype(np.float32)
            image[mask] = color
            gt |= mask
        image += rng.normal(0.0, 0.02, size=image.shape).astype(np.float32)
        image = np.clip(image, 0.0, 1.0)
        frac = gt.mean()
        if 0.04 < frac < 0.8:
            return SynthSample(image=image, gt=gt)
    raise RuntimeError("failed to draw a synthetic sample within bounds")


# --------------------------------------------------------------------------
# training

def _forward(bundle: ModelBundle, fs, mask: RefMask) -> Tensor:
    f_c = click_feature(mask, bundle.table, fs.levels[0])
    return decode(fs, f_c, bundle.decoder)  # no zoom during training


def simulate_interaction(bundle: ModelBundle, fs, gt: np.ndarray, n: int) -> RefMask:
    """Roll the click loop forward n rounds without recording gradients.

    Each round clicks the current worst error, stamps the disk, folds the
    previous round's prediction into the mask, and (except on the last
    round, whose forward the recorded pass replays) runs the decoder.
    """
    mask = init_ref_mask(*gt.shape)
    pred = np.zeros(gt.shape, dtype=bool)
    have_pred = False
    for k in range(n):
        click = next_click(pred, gt, mask)
        mask = apply_click(mask, click)
        if have_pred:
            mask = merge_prediction(mask, pred)
        if k < n - 1:
            logits = _forward(bundle, fs, mask)
            pred = logits.data[:, :, 0] > 0.0
            have_pred = True
    return mask


def train_step(bundle: ModelBundle, sample: SynthSample, cfg: TrainConfig,
               rng: np.random.Generator, optimizer: AdamW,
               params: list[Tensor]) -> float:
    """One simulate-then-supervise update; returns the loss value."""
    h, w = sample.gt.shape
    fs = bundle.encode(sample.image)
    ph, pw = fs.padded_h, fs.padded_w
    gt = np.zeros((ph, pw), dtype=bool)
    gt[:h, :w] = sample.gt

    n = simulate_rounds(rng, cfg)
    mask = simulate_interaction(bundle, fs, gt, n)

    with GradientTape() as tape:
        if cfg.train_encoder:
            fs_live = bundle.encode(sample.image)
        else:
            fs_live = fs
        f_c = click_feature(mask, bundle.table, fs_live.levels[0])
        logits = decode(fs_live, f_c, bundle.decoder)
        logits_crop = nm.slice_(logits, [(0, h), (0, w)])
        loss = nfl_loss(logits_crop, sample.gt, cfg.focal_gamma)
    grads = gradients(tape, loss, params, strict=False)
    optimizer.step(grads)
    return loss.item()


def train(bundle: ModelBundle, cfg: TrainConfig,
          log: Optional[Callable[[dict], None]] = None,
          sample_fn: Optional[Callable] = None) -> list[float]:
    """Run cfg.steps updates on freshly drawn synthetic samples."""
    rng = np.random.default_rng(cfg.seed)
    params = [t for _, t in bundle.named_params(include_encoder=cfg.train_encoder)]
    optimizer = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    draw = sample_fn or (lambda r: synth_sample(r, cfg.image_size, cfg.image_size))
    losses = []
    for step in range(cfg.steps):
        t0 = time.perf_counter()
        if cfg.lr_decay_power > 0:
            optimizer.lr = cfg.lr * (1.0 - step / cfg.steps) ** cfg.lr_decay_power
        total = 0.0
        for _ in range(cfg.batch):
            total += train_step(bundle, draw(rng), cfg, rng, optimizer, params)
        loss = total / cfg.batch
        losses.append(loss)
        if log is not None:
            log({"step": step + 1, "loss": loss,
                 "wall_time_s": round(time.perf_counter() - t0, 4)})
    return losses
