#!/usr/bin/env python3
"""Train a small model end to end, then super-resolve held-out pairs.

Desk-scale run: 32x32 scenes at 4x with a slim U-Net for a few hundred
steps (a couple of minutes on a laptop CPU). The point is the moving parts,
not image quality; raise total_steps / sizes for better samples.
"""

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from changesr.config import config_from_dict
from changesr.experiments import load_pairs, run_eval, run_training
from changesr.conditioning import build_condition_set
from changesr.training import degrade_for_eval, sample_sr

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

cfg = config_from_dict(
    {
        "seed": 0,
        "scale": 4,
        "degradation_preset": "simple",
        "data": {"size": 32, "num_patches": 5, "num_train": 64, "num_val": 12, "num_classes": 5},
        "denoiser": {
            "base_channels": 16, "channel_mult": [1, 2], "attn_levels": [1],
            "num_heads": 2, "dropout_rate": 0.1, "guidance_channels": 8,
            "sft_hidden": 16, "emb_dim": 32,
        },
        "train": {"batch_size": 8, "total_steps": 400, "crop_size": 32, "sampler_steps": 12},
    }
)

model, ckpts, log = run_training(cfg, out_dir=OUT / "04_run")
steps = [rec["step"] for rec in log]
losses = [rec["loss"] for rec in log]
print(f"loss: first-50 mean {np.mean(losses[:50]):.4f} -> last-50 mean {np.mean(losses[-50:]):.4f}")

fig, ax = plt.subplots(figsize=(6, 3.5))
ax.plot(steps, losses, lw=0.7)
ax.set_xlabel("step"), ax.set_ylabel("weighted loss"), ax.set_yscale("log")
fig.tight_layout()
fig.savefig(OUT / "04_loss_curve.png", dpi=120)

# evaluate and draw LR | Ref | SR | HR strips for a few validation pairs
report = run_eval(cfg, model)
print(f"val: psnr={report['aggregate']['psnr_mean']:.2f} dB, "
      f"toy-frechet={report['aggregate']['frechet']:.4f}")
(OUT / "04_report.json").write_text(json.dumps(report["aggregate"], indent=1))

pairs = load_pairs(cfg, "val")[:4]
dc = cfg.degradation_config()
fig, axes = plt.subplots(len(pairs), 4, figsize=(9, 2.3 * len(pairs)))
for i, pair in enumerate(pairs):
    lr = degrade_for_eval(pair.hr, dc, cfg.seed, i)
    cond = build_condition_set(lr, pair.ref, pair.mask, cfg.scale, cfg.data.num_classes)
    sr = sample_sr(model, cond, cfg.sigma, cfg.train.sampler_steps, np.random.default_rng(i))
    for j, (img, title) in enumerate(
        [(lr, "LR"), (pair.ref, "Ref"), (sr, "SR"), (pair.hr, "HR")]
    ):
        axes[i, j].imshow((img + 1) / 2, interpolation="nearest")
        axes[i, j].set_axis_off()
        if i == 0:
            axes[i, j].set_title(title)
fig.tight_layout()
fig.savefig(OUT / "04_samples.png", dpi=120)
print(f"wrote {OUT / '04_samples.png'}")
