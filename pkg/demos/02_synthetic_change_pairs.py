#!/usr/bin/env python3
"""Procedural change pairs: HR scene, earlier-time reference, change mask.

Shows the core dataset contract: unchanged pixels are bit-identical between
the HR image and the reference, and changed pixels carry the HR-time class
in the mask. Also demonstrates the FN/FP mask corruption used for the
robustness probe.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from changesr.datagen import SceneSpec, corrupt_mask, generate_scene, mutate_scene

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

spec = SceneSpec(size=64, num_patches=8, seed=7)
rng = np.random.default_rng(7)

fig, axes = plt.subplots(3, 5, figsize=(14, 9))
for row in range(3):
    scene = generate_scene(spec, rng)
    ref, mask = mutate_scene(scene, rng, change_rate=0.5)
    identical = np.array_equal(scene.hr[mask == 0], ref[mask == 0])
    print(
        f"scene {row}: changed fraction {(mask > 0).mean():.2f}, "
        f"unchanged pixels identical: {identical}"
    )
    corrupted = corrupt_mask(mask, rng, fn_rate=0.3, fp_rate=0.1, class_count=spec.num_classes)
    panels = [
        ((scene.hr + 1) / 2, "HR (target time)"),
        ((ref + 1) / 2, "Ref (earlier time)"),
        (mask, "change mask"),
        (corrupted, "corrupted mask"),
        (np.abs(scene.hr - ref).mean(-1), "|HR - Ref|"),
    ]
    for col, (img, title) in enumerate(panels):
        ax = axes[row, col]
        ax.imshow(img, cmap=None if img.ndim == 3 else "tab10", interpolation="nearest")
        ax.set_axis_off()
        if row == 0:
            ax.set_title(title, fontsize=10)
fig.tight_layout()
fig.savefig(OUT / "02_change_pairs.png", dpi=120)
print(f"wrote {OUT / '02_change_pairs.png'}")
