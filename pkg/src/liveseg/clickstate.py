"""Click bookkeeping: the five-label reference mask and click embedding.

Every pixel carries one of five confidence labels.  Click disks pin pixels
to a definite label; between clicks, model predictions soften the rest of
the mask through the merge rules in `merge_prediction`.  The labeled grid
is what the decoder actually sees, via a learned per-label embedding added
to the finest feature level.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from liveseg import numerics as nm
from liveseg.numerics import Tensor

CLICK_RADIUS = 5


class Label(IntEnum):
    """Per-pixel annotation state; D labels are only ever created by clicks."""

    U = 0       # unknown
    D_FG = 1    # definite foreground (inside a positive click disk)
    P_FG = 2    # possible foreground (model said foreground)
    P_BG = 3    # possible background (model said background)
    D_BG = 4    # definite background (inside a negative click disk)


@dataclass(frozen=True)
class Click:
    """One annotator interaction in original-image pixel coordinates."""

    x: int
    y: int
    positive: bool


class RefMask:
    """H-by-W grid of `Label` plus the footprint of all click disks.

    Instances are treated as immutable; `apply_click` and
    `merge_prediction` return new masks.
    """

    __slots__ = ("labels", "disk")

    def __init__(self, labels: np.ndarray, disk: np.ndarray):
        self.labels = labels
        self.disk = disk

    @property
    def shape(self) -> tuple:
        return self.labels.shape

    def copy(self) -> "RefMask":
        return RefMask(self.labels.copy(), self.disk.copy())


class ClickEmbeddingTable:
    """Five learnable vectors, one per label, matching the F1 channel count."""

    def __init__(self, channels: int, dtype=np.float32):
        self.vectors = Tensor(np.zeros((len(Label), channels), dtype=dtype))

    @property
    def channels(self) -> int:
        return self.vectors.shape[1]

    def named_params(self, prefix: str = "click_table"):
        yield f"{prefix}/vectors", self.vectors


def init_ref_mask(h: int, w: int) -> RefMask:
    """All-unknown mask with no click disks."""
    if h < 1 or w < 1:
        raise ValueError(f"mask dims must be positive, got ({h},{w})")
    return RefMask(np.full((h, w), Label.U, dtype=np.uint8), np.zeros((h, w), dtype=bool))


# disk footprint: integer offsets within euclidean distance CLICK_RADIUS (inclusive)
_DISK_DY, _DISK_DX = np.nonzero(
    (np.arange(-CLICK_RADIUS, CLICK_RADIUS + 1)[:, None] ** 2
     + np.arange(-CLICK_RADIUS, CLICK_RADIUS + 1)[None, :] ** 2)
    <= CLICK_RADIUS ** 2)
_DISK_DY = _DISK_DY - CLICK_RADIUS
_DISK_DX = _DISK_DX - CLICK_RADIUS


def apply_click(m: RefMask, c: Click) -> RefMask:
    """Stamp a definite-label disk; newer disks overwrite older labels."""
    h, w = m.shape
    if not (0 <= c.x < w and 0 <= c.y < h):
        raise ValueError(f"click ({c.x},{c.y}) outside {w}x{h} mask")
    ys = c.y + _DISK_DY
    xs = c.x + _DISK_DX
    keep = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    ys, xs = ys[keep], xs[keep]
    out = m.copy()
    out.labels[ys, xs] = Label.D_FG if c.positive else Label.D_BG
    out.disk[ys, xs] = True
    return out


def merge_prediction(m: RefMask, pred: np.ndarray) -> RefMask:
    """Fold a boolean prediction into the mask, leaving click disks untouched.

    Outside the disks: unknown pixels adopt the predicted side as
    "possible"; a possible label contradicted by the prediction falls back
    to unknown; agreement keeps the label.
    """
    if pred.shape != m.shape:
        raise ValueError(f"prediction shape {pred.shape} != mask shape {m.shape}")
    labels = m.labels
    new = labels.copy()
    free = ~m.disk
    u = free & (labels == Label.U)
    new[u & pred] = Label.P_FG
    new[u & ~pred] = Label.P_BG
    pf = free & (labels == Label.P_FG)
    pb = free & (labels == Label.P_BG)
    new[pf & ~pred] = Label.U
    new[pb & pred] = Label.U
    # agreeing P labels stay; disk pixels untouched by construction
    return RefMask(new, m.disk.copy())


def click_feature(m: RefMask, table: ClickEmbeddingTable, f1: Tensor) -> Tensor:
    """Embed the label grid, resize onto the finest feature map, and add it."""
    if table.channels != f1.shape[2]:
        raise ValueError(
            f"embedding channels {table.channels} != feature channels {f1.shape[2]}")
    h, w = m.shape
    fh, fw = f1.shape[0], f1.shape[1]
    if (h, w) != (4 * fh, 4 * fw):
        raise ValueError(f"mask {h}x{w} does not align with feature grid {fh}x{fw} (stride 4)")
    emb = nm.embed(m.labels, table.vectors)
    return nm.add(nm.bilinear_resize(emb, fh, fw), f1)


# --- snapshot serialization -------------------------------------------------
# label grid as a run-length stream of (u32 LE count, u8 label) pairs

def labels_to_rle_bytes(labels: np.ndarray) -> bytes:
    flat = labels.ravel()
    change = np.nonzero(flat[1:] != flat[:-1])[0] + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [flat.size]])
    out = bytearray()
    for s, e in zip(starts, ends):
        out += int(e - s).to_bytes(4, "little")
        out += bytes([int(flat[s])])
    return bytes(out)


def labels_from_rle_bytes(blob: bytes, h: int, w: int) -> np.ndarray:
    if len(blob) % 5 != 0:
        raise ValueError("label RLE blob length must be a multiple of 5")
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(-1, 5)
    counts = raw[:, :4].copy().view("<u4").ravel()
    values = raw[:, 4]
    flat = np.repeat(values, counts)
    if flat.size != h * w:
        raise ValueError(f"label RLE decodes to {flat.size} pixels, expected {h * w}")
    if (flat >= len(Label)).any():
        raise ValueError("label RLE contains out-of-range label values")
    return flat.reshape(h, w)
