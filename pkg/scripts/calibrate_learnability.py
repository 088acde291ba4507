"""Dry run of the desk-scale learnability acceptance criterion."""

import sys
import time

import numpy as np

from liveseg.decoder import DecoderConfig
from liveseg.encoder import EncoderConfig
from liveseg.evaluator import evaluate_instance
from liveseg.model import build_model, preset_decoder_config
from liveseg.session import Engine, EngineSegmenter
from liveseg.trainer import TrainConfig, synth_sample, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
size = int(sys.argv[2]) if len(sys.argv) > 2 else 96

enc = EncoderConfig(base_channels=16)  # desk defaults otherwise: C0=96, depth 4
dec = preset_decoder_config("tiny", base_channels=16)
bundle = build_model(enc, dec, seed=0)
cfg = TrainConfig(steps=steps, image_size=size, seed=0)

t0 = time.time()
losses = train(bundle, cfg, log=lambda e: print(e, flush=True) if e["step"] % 100 == 0 else None)
train_time = time.time() - t0
print(f"TRAIN {steps} steps in {train_time / 60:.1f} min; "
      f"loss {np.mean(losses[:20]):.4f} -> {np.mean(losses[-20:]):.4f}", flush=True)

for zoom in (True, False):
    engine = Engine(bundle, zoom=zoom)
    seg = EngineSegmenter(engine)
    rng = np.random.default_rng(1234)  # held out: training used seed 0
    best = []
    monotone = 0
    t0 = time.time()
    for i in range(100):
        s = synth_sample(rng, size, size)
        rec = evaluate_instance(seg, s.image, s.gt, max_clicks=3, target_iou=0.85,
                                instance_id=str(i))
        best.append(max(rec.ious))
        if len(rec.ious) >= 2 and all(b > a for a, b in zip(rec.ious, rec.ious[1:])):
            monotone += 1
    print(f"EVAL(zoom={zoom}) 100 instances in {time.time() - t0:.0f}s; "
          f"mean best-of-3 IoU = {np.mean(best):.4f}; "
          f"fraction >= .85 = {(np.array(best) >= 0.85).mean():.2f}", flush=True)
    print(f"strictly-increasing-iou sessions (of multi-click ones): {monotone}")
print(f"TRAIN+1st-EVAL {(time.time() - t0 + train_time) / 60:.1f} min")
