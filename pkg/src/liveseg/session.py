"""Live annotation engine: sessions over cached features, clicks, undo.

A session binds one image's preprocessed features to an ordered click
list.  Session state is a pure function of (weights, features, clicks):
every mutation funnels through the same deterministic step, so undo can
rebuild by replaying the remaining clicks and tests can verify replay
determinism byte for byte.
"""

from __future__ import annotations

import os
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np

from liveseg.cachefile import cache_read, cache_write
from liveseg.clickstate import (
    Click,
    RefMask,
    apply_click,
    click_feature,
    init_ref_mask,
    labels_from_rle_bytes,
    labels_to_rle_bytes,
    merge_prediction,
)
from liveseg.decoder import compute_roi, decode
from liveseg.encoder import FeatureMapSet
from liveseg.model import ModelBundle


def mask_to_rle(mask: np.ndarray) -> list[int]:
    """Alternating run lengths starting with background, row-major."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    change = np.nonzero(flat[1:] != flat[:-1])[0] + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:  # stream must start with a background count
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_to_mask(rle: list[int], h: int, w: int) -> np.ndarray:
    total = sum(rle)
    if total != h * w:
        raise ValueError(f"RLE sums to {total}, expected {h * w}")
    values = np.zeros(len(rle), dtype=bool)
    values[1::2] = True
    return np.repeat(values, rle).reshape(h, w)


@dataclass
class ClickResult:
    mask: np.ndarray          # bool, original dims
    mask_rle: list
    latency_ms: float
    click_count: int
    cold: bool                # features were encoded on demand, not cached


@dataclass
class Session:
    session_id: str
    image_id: str
    features: FeatureMapSet
    cold: bool
    clicks: list = field(default_factory=list)
    mask: RefMask = None
    last_pred: np.ndarray = None
    timings: list = field(default_factory=list)       # latency_ms per request
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    last_token: str = None
    last_result: ClickResult = None

    def __post_init__(self):
        if self.mask is None:
            self.reset_state()

    def reset_state(self):
        self.mask = init_ref_mask(self.features.padded_h, self.features.padded_w)
        self.last_pred = np.zeros((self.features.padded_h, self.features.padded_w), dtype=bool)

    @property
    def original_dims(self) -> tuple[int, int]:
        return self.features.original_h, self.features.original_w


class SessionNotFound(KeyError):
    pass


class Engine:
    """Shared read-only weights + feature caches, many concurrent sessions."""

    def __init__(self, bundle: ModelBundle, cache_dir: str | None = None,
                 zoom: bool = True):
        self.bundle = bundle
        self.cache_dir = cache_dir
        self.zoom = zoom and bundle.dec_cfg.zoomin_start is not None
        self.sessions: dict[str, Session] = {}
        self._features: dict[str, FeatureMapSet] = {}
        self._lock = threading.Lock()

    # ---- feature cache ----

    def cache_path(self, image_id: str) -> str:
        if self.cache_dir is None:
            raise SessionNotFound(f"no cache directory configured for {image_id!r}")
        return os.path.join(self.cache_dir, f"{image_id}.ifmr")

    def encode_to_cache(self, image_id: str, image) -> FeatureMapSet:
        fs = self.bundle.encode(image)
        cache_write(fs, self.cache_path(image_id))
        return fs

    def _load_features(self, image_id: str) -> FeatureMapSet:
        with self._lock:
            fs = self._features.get(image_id)
        if fs is not None:
            return fs
        fs = cache_read(self.cache_path(image_id))
        if fs.base_channels != self.bundle.dec_cfg.base_channels:
            raise ValueError(
                f"cache {image_id!r} has C1={fs.base_channels}, "
                f"model expects {self.bundle.dec_cfg.base_channels}")
        with self._lock:
            # two racers may both read; keep the first one so handles stay shared
            fs = self._features.setdefault(image_id, fs)
        return fs

    # ---- sessions ----

    def open_session(self, image_id: str | None = None, image=None) -> Session:
        if image_id is not None and (self.cache_dir is not None
                                     and os.path.exists(self.cache_path(image_id))):
            features, cold = self._load_features(image_id), False
        elif image is not None:
            features, cold = self.bundle.encode(image), True
        else:
            raise SessionNotFound(f"no cached features for image {image_id!r} "
                                  f"and no image bytes supplied")
        s = Session(session_id=uuid.uuid4().hex, image_id=image_id or "<inline>",
                    features=features, cold=cold)
        with self._lock:
            self.sessions[s.session_id] = s
        return s

    def get_session(self, session_id: str) -> Session:
        with self._lock:
            s = self.sessions.get(session_id)
        if s is None:
            raise SessionNotFound(f"unknown session {session_id!r}")
        return s

    def close_session(self, session_id: str) -> None:
        with self._lock:
            self.sessions.pop(session_id, None)

    # ---- the click chain ----

    def _validate_click(self, s: Session, c: Click) -> None:
        oh, ow = s.original_dims
        if not (0 <= c.x < ow and 0 <= c.y < oh):
            raise ValueError(f"click ({c.x},{c.y}) outside image {ow}x{oh}")

    def _step(self, s: Session, c: Click) -> np.ndarray:
        """Apply one click and run the decoder; updates mask and prediction."""
        s.mask = apply_click(s.mask, c)
        f_c = click_feature(s.mask, self.bundle.table, s.features.levels[0])
        roi = compute_roi(s.last_pred, s.mask, self.bundle.dec_cfg.roi_expand) \
            if self.zoom else None
        logits = decode(s.features, f_c, self.bundle.decoder, roi=roi)
        pred = logits.data[:, :, 0] > 0.0
        s.mask = merge_prediction(s.mask, pred)
        s.last_pred = pred
        return pred

    def _result(self, s: Session, latency_ms: float) -> ClickResult:
        oh, ow = s.original_dims
        mask = s.last_pred[:oh, :ow]
        return ClickResult(mask=mask, mask_rle=mask_to_rle(mask),
                           latency_ms=latency_ms, click_count=len(s.clicks),
                           cold=s.cold)

    def handle_click(self, s: Session, c: Click, token: str | None = None) -> ClickResult:
        """Full chain: stamp disk, embed, decode, threshold, merge, crop."""
        with s.lock:
            if token is not None and token == s.last_token and s.last_result is not None:
                return s.last_result
            self._validate_click(s, c)
            t0 = time.perf_counter()
            self._step(s, c)
            s.clicks.append(c)
            latency = (time.perf_counter() - t0) * 1e3
            s.timings.append(latency)
            result = self._result(s, latency)
            s.last_token, s.last_result = token, result
            return result

    def undo(self, s: Session) -> ClickResult:
        """Drop the last click and rebuild state by replaying the rest.

        Merge rules are history-dependent and non-invertible, so replay is
        the only correct inverse.
        """
        with s.lock:
            if not s.clicks:
                raise ValueError("undo on a session with no clicks")
            replay = s.clicks[:-1]
            t0 = time.perf_counter()
            s.reset_state()
            s.clicks = []
            for c in replay:
                self._step(s, c)
                s.clicks.append(c)
            latency = (time.perf_counter() - t0) * 1e3
            s.timings.append(latency)
            s.last_token, s.last_result = None, None
            return self._result(s, latency)

    def replay_from_scratch(self, s: Session) -> ClickResult:
        """Recompute the session's current result from its click list alone."""
        with s.lock:
            clicks = list(s.clicks)
            fresh = Session(session_id="replay", image_id=s.image_id,
                            features=s.features, cold=s.cold)
            t0 = time.perf_counter()
            for c in clicks:
                self._step(fresh, c)
                fresh.clicks.append(c)
            return self._result(fresh, (time.perf_counter() - t0) * 1e3)

    def snapshot(self, s: Session) -> dict:
        """Serializable session state; the label grid travels run-length
        encoded, one byte per pixel before compression."""
        with s.lock:
            ph, pw = s.features.padded_h, s.features.padded_w
            return {
                "session_id": s.session_id,
                "image_id": s.image_id,
                "padded_h": ph,
                "padded_w": pw,
                "clicks": [{"x": c.x, "y": c.y, "positive": c.positive}
                           for c in s.clicks],
                "labels_rle": labels_to_rle_bytes(s.mask.labels).hex(),
                "timings_ms": list(s.timings),
            }

    @staticmethod
    def snapshot_labels(snap: dict) -> np.ndarray:
        return labels_from_rle_bytes(bytes.fromhex(snap["labels_rle"]),
                                     snap["padded_h"], snap["padded_w"])


class EngineSegmenter:
    """Adapter giving the evaluator its open/click interface."""

    def __init__(self, engine: Engine):
        self.engine = engine

    def open(self, image):
        session = self.engine.open_session(image=image)
        return _EngineSession(self.engine, session)


class _EngineSession:
    def __init__(self, engine, session):
        self.engine = engine
        self.session = session

    def click(self, x, y, positive):
        return self.engine.handle_click(self.session, Click(x, y, positive)).mask
