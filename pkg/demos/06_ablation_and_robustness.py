#!/usr/bin/env python3
"""Miniature ablation matrix and mask-corruption robustness sweep.

Runs the six condition/decoder switch rows at toy scale (minutes, not the
full desk-scale protocol) and then sweeps synthetic FN/FP corruption rates
on the trained full model. For the calibrated desk-scale version of this
experiment see configs/ablation_desk.json and the acceptance suite.
"""

import json
from pathlib import Path

from changesr.config import config_from_dict
from changesr.experiments import run_ablation, run_robustness, run_ablation_cell

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

cfg = config_from_dict(
    {
        "seed": 0,
        "scale": 4,
        "degradation_preset": "simple",
        "data": {"size": 32, "num_patches": 5, "num_train": 48, "num_val": 12, "num_classes": 5},
        "denoiser": {
            "base_channels": 8, "channel_mult": [1, 2], "attn_levels": [1],
            "num_heads": 2, "dropout_rate": 0.1, "guidance_channels": 8,
            "sft_hidden": 8, "emb_dim": 32,
        },
        "train": {"batch_size": 8, "total_steps": 150, "crop_size": 32, "sampler_steps": 8},
    }
)

payload = run_ablation(cfg, seeds=[0], out_dir=OUT / "06_ablation")
print(f"\n{'row':<14}{'frechet':>10}{'psnr':>9}{'rank':>6}")
for t in payload["summary"]:
    print(f"{t['row']:<14}{t['frechet_mean']:>10.4f}{t['psnr_mean']:>9.3f}{t['composite_rank']:>6}")

# corrupt the change masks the full model relies on and watch metrics react
_, model = run_ablation_cell(cfg, "full", 0)
rob = run_robustness(cfg, model, out_dir=OUT / "06_robustness")
for kind in ("fn_sweep", "fp_sweep"):
    print(f"\n{kind}:")
    for row in rob[kind]:
        print(f"  rate={row['rate']:<5} frechet={row['frechet']:.4f} psnr={row['psnr']:.3f}")
print(f"\nwrote {OUT / '06_ablation' / 'ablation.json'} and {OUT / '06_robustness' / 'robustness.json'}")
