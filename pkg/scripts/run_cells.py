#!/usr/bin/env python3
"""Run selected (row, seed) cells of the ablation matrix in one process.

Intended for coarse process-level parallelism on small machines:

    python scripts/run_cells.py --config configs/ablation_desk.json \
        --out artifacts/ablation --cells lr:0,lr+ref:0,full:0

Each cell writes cell_<row>_s<seed>.json and its checkpoint into --out.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import torch

from changesr.config import load_config
from changesr.experiments import ABLATION_ROWS, run_ablation_cell


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--cells", required=True, help="comma list of row:seed")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    torch.set_num_threads(args.threads)
    cfg = load_config(args.config)
    legal = {name for name, _ in ABLATION_ROWS}
    cells = []
    for tok in args.cells.split(","):
        row, seed = tok.rsplit(":", 1)
        if row not in legal:
            sys.exit(f"unknown row {row!r}; legal: {sorted(legal)}")
        cells.append((row, int(seed)))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps({"config": cfg.to_dict(), "config_hash": cfg.config_hash()}, indent=1, sort_keys=True)
    )
    for row, seed in cells:
        t0 = time.time()
        record, _ = run_ablation_cell(cfg, row, seed, out_dir=out)
        print(
            f"[{time.strftime('%H:%M:%S')}] {row} seed {seed}: "
            f"frechet={record['frechet']:.4f} psnr={record['psnr']:.3f} "
            f"({time.time() - t0:.0f}s)",
            flush=True,
        )


if __name__ == "__main__":
    main()
