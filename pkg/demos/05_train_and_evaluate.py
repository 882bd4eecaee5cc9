#!/usr/bin/env python3
"""End-to-end: train a small model on synthetic clips and beat copy-last.

Uses a reduced profile (quarter widths, 32px patches) so a few minutes of
CPU are enough to see the trained model overtake the copy-last-frame
baseline at t+1 and t+3. Pass a step count to train longer.

    python demos/05_train_and_evaluate.py [steps]
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from dmvfn import (
    SynthConfig, write_synth_dataset, load_dataset,
    TrainConfig, train, RoutingMode, evaluate_model, predict_sequence, save_frames,
)

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 800
root = Path(tempfile.mkdtemp(prefix="dmvfn_train_"))
mtrain = write_synth_dataset(SynthConfig(num_clips=120, frames=6, speed=(0.0, 5.0), seed=1), root / "train")
mtest = write_synth_dataset(SynthConfig(num_clips=30, frames=6, speed=(0.0, 5.0), seed=2), root / "test")

cfg = TrainConfig(manifest=str(mtrain), steps=steps, batch=4, patch=32, width_scale=0.25,
                  lr_start=8e-4, lr_end=1e-5, routing_mode="stebs", beta=0.5, seed=0,
                  ckpt_path=str(root / "model.ckpt"), log_path=str(root / "log.csv"))
print(f"training {steps} steps (log: {cfg.log_path}) ...")
result = train(cfg)
losses = [float(l.split(",")[2]) for l in result.log_lines[1:]]
print("loss: first 20 steps %.4f -> last 20 steps %.4f" % (np.mean(losses[:20]), np.mean(losses[-20:])))

clips = load_dataset(mtest)
report = evaluate_model(result.model, clips, [1, 3], mode=RoutingMode(kind="stebs", beta=0.5),
                        rng=np.random.default_rng(0))
print("\nheld-out metrics (MS-SSIM x100):")
for h in (1, 3):
    model_score = report.get("all", h, "ms_ssim_x100")
    copy_score = report.get("copy_last/all", h, "ms_ssim_x100")
    print(f"  t+{h}: model {model_score:6.2f}   copy-last {copy_score:6.2f}   margin {model_score - copy_score:+.2f}")

# roll out five frames from one test clip and keep them as PNGs
frames = predict_sequence(result.model, clips[0].frames[0], clips[0].frames[1], 5,
                          mode=RoutingMode(kind="stebs", beta=0.5), rng=np.random.default_rng(3))
save_frames(frames, root / "rollout")
print("\n5-frame rollout written to", root / "rollout")
