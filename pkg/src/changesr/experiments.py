"""Reusable experiment drivers: training runs, ablation matrix, robustness sweeps.

These functions are the programmatic core of the CLI subcommands, kept
importable so tests and notebooks can run the same logic without a shell.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .datagen import SceneSpec, corrupt_mask, generate_pairs, ingest_dataset
from .training import PairDataSource, build_model, load_model, train, validate
from .metrics import toy_extractor

# Condition/decoder switch matrix, one row per ablation configuration
ABLATION_ROWS = (
    ("lr", dict(use_ref=False, use_mask=False, semantic_sft=False, ref_texture_sft=False)),
    ("lr+ref", dict(use_ref=True, use_mask=False, semantic_sft=False, ref_texture_sft=False)),
    ("lr+ref+mask", dict(use_ref=True, use_mask=True, semantic_sft=False, ref_texture_sft=False)),
    ("tex-sft", dict(use_ref=True, use_mask=True, semantic_sft=False, ref_texture_sft=True)),
    ("sem-sft", dict(use_ref=True, use_mask=True, semantic_sft=True, ref_texture_sft=False)),
    ("full", dict(use_ref=True, use_mask=True, semantic_sft=True, ref_texture_sft=True)),
)

ROBUSTNESS_RATES = (0.0, 0.25, 0.5, 1.0)


def scene_spec(cfg: ExperimentConfig) -> SceneSpec:
    palette = SceneSpec().palette
    if cfg.data.num_classes > len(palette):
        raise ValueError(
            f"synthetic palette supports up to {len(palette)} classes, "
            f"got {cfg.data.num_classes}"
        )
    return SceneSpec(
        size=cfg.data.size,
        num_patches=cfg.data.num_patches,
        palette=palette[: cfg.data.num_classes],
        seed=cfg.seed,
    )


def synthetic_pairs(cfg: ExperimentConfig, split: str):
    """Deterministic train/val scene pairs; val pairs never depend on switches."""
    spec = scene_spec(cfg)
    if split == "train":
        return generate_pairs(spec, cfg.data.num_train, seed=cfg.seed * 1000 + 1, change_rate=cfg.data.change_rate)
    if split == "val":
        return generate_pairs(spec, cfg.data.num_val, seed=cfg.seed * 1000 + 2, change_rate=cfg.data.change_rate)
    raise ValueError(f"split must be train or val, got {split!r}")


def load_pairs(cfg: ExperimentConfig, split: str):
    """Pairs from the configured real dataset root, or synthetic fallback.

    A dataset tree is split by manifest order: the first num_val pairs are
    held out for validation, the rest train.
    """
    if cfg.data.root:
        manifest = ingest_dataset(cfg.data.root, cfg.scale, cfg.data.num_classes)
        pairs = [manifest.load_pair(i) for i in range(len(manifest))]
        if split == "val":
            return pairs[: cfg.data.num_val]
        return pairs[cfg.data.num_val :]
    return synthetic_pairs(cfg, split)


def run_training(cfg: ExperimentConfig, out_dir=None, pairs=None):
    """Train one model per the config; returns (model, checkpoints, log)."""
    pairs = pairs if pairs is not None else load_pairs(cfg, "train")
    source = PairDataSource(pairs, cfg.degradation_config(), cfg.train.crop_size)
    model = build_model(cfg.model_config(), seed=cfg.train.seed)
    ckpts, log = train(cfg.train, source, model, sigma_params=cfg.sigma, out_dir=out_dir)
    return model, ckpts, log


def run_eval(cfg: ExperimentConfig, model, val_pairs=None, mask_transform=None, ref_override=None):
    """Validation report for a model (instance or checkpoint path)."""
    val_pairs = val_pairs if val_pairs is not None else load_pairs(cfg, "val")
    return validate(
        model,
        val_pairs,
        scale=cfg.scale,
        sigma_params=cfg.sigma,
        n_steps=cfg.train.sampler_steps,
        seed=cfg.seed,
        extractor=toy_extractor(seed=0, dim=cfg.feature_dim),
        mask_transform=mask_transform,
        ref_override=ref_override,
    )


def row_config(cfg: ExperimentConfig, switches: dict, seed: int) -> ExperimentConfig:
    """Derive the experiment config for one ablation row and seed."""
    return replace(cfg, train=replace(cfg.train, seed=seed, **switches))


def cell_name(row: str, seed: int) -> str:
    return f"{row.replace('+', '_')}_s{seed}"


def run_ablation_cell(cfg: ExperimentConfig, row: str, seed: int, out_dir=None):
    """Train and evaluate one (row, seed) cell of the switch matrix.

    When out_dir is given, writes cell_<row>_s<seed>.json plus the trained
    checkpoint, so cells can run in separate processes and be merged later.
    """
    switches = dict(ABLATION_ROWS)[row]
    rc = row_config(cfg, switches, seed)
    train_pairs = load_pairs(cfg, "train")
    val_pairs = load_pairs(cfg, "val")
    model, _, log = run_training(rc, pairs=train_pairs)
    report = run_eval(rc, model, val_pairs)
    record = {
        "row": row,
        "seed": seed,
        "frechet": report["aggregate"].get("frechet"),
        "psnr": report["aggregate"].get("psnr_mean"),
        "psnr_changed": report["aggregate"].get("psnr_changed_mean"),
        "psnr_unchanged": report["aggregate"].get("psnr_unchanged_mean"),
        "first_loss": log[0]["loss"] if log else None,
        "final_loss": log[-1]["loss"] if log else None,
        "mean_loss_first_100": float(np.mean([r["loss"] for r in log[:100]])) if log else None,
        "mean_loss_last_100": float(np.mean([r["loss"] for r in log[-100:]])) if log else None,
    }
    if out_dir:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        from .training import save_checkpoint

        save_checkpoint(out_dir / f"ckpt_{cell_name(row, seed)}.npz", model,
                        step=rc.train.total_steps, seed=seed)
        (out_dir / f"cell_{cell_name(row, seed)}.json").write_text(
            json.dumps(record, indent=1, sort_keys=True)
        )
    return record, model


def run_ablation(cfg: ExperimentConfig, seeds, out_dir=None, rows=ABLATION_ROWS):
    """Train and evaluate every switch-matrix row for every seed.

    Returns {"rows": [...], "summary": [...]}; writes ablation.json and
    per-cell checkpoints under out_dir when given.
    """
    out_dir = Path(out_dir) if out_dir else None
    results = []
    for name, _switches in rows:
        for seed in seeds:
            record, _model = run_ablation_cell(cfg, name, seed, out_dir=out_dir)
            results.append(record)
    summary = summarize_ablation(results)
    payload = {"rows": results, "seeds": list(seeds), "summary": summary}
    if out_dir:
        (out_dir / "ablation.json").write_text(json.dumps(payload, indent=1, sort_keys=True))
    return payload


def summarize_ablation(results):
    """Mean/std per row plus a composite rank over (frechet, 1 - psnr)."""
    by_row = {}
    for rec in results:
        by_row.setdefault(rec["row"], []).append(rec)
    table = []
    for name, recs in by_row.items():
        fre = np.array([r["frechet"] for r in recs], dtype=np.float64)
        ps = np.array([r["psnr"] for r in recs], dtype=np.float64)
        table.append(
            {
                "row": name,
                "n_seeds": len(recs),
                "frechet_mean": float(fre.mean()),
                "frechet_std": float(fre.std(ddof=1)) if len(recs) > 1 else 0.0,
                "psnr_mean": float(ps.mean()),
                "psnr_std": float(ps.std(ddof=1)) if len(recs) > 1 else 0.0,
            }
        )
    # lower frechet and lower (1 - psnr) i.e. higher psnr are better
    fr_rank = {t["row"]: r for r, t in enumerate(sorted(table, key=lambda t: t["frechet_mean"]))}
    ps_rank = {t["row"]: r for r, t in enumerate(sorted(table, key=lambda t: -t["psnr_mean"]))}
    for t in table:
        t["composite_rank"] = fr_rank[t["row"]] + ps_rank[t["row"]]
    table.sort(key=lambda t: t["composite_rank"])
    return table


def run_robustness(cfg: ExperimentConfig, model, out_dir=None, rates=ROBUSTNESS_RATES):
    """Sweep synthetic FN/FP mask corruption rates and re-evaluate.

    The (fn=0, fp=0) sweep point uses the untouched masks, so it reproduces
    the clean evaluation bit-exactly.
    """
    if isinstance(model, (str, Path)):
        model = load_model(model)
    val_pairs = load_pairs(cfg, "val")
    k = cfg.data.num_classes
    sweeps = {"fn": [], "fp": []}
    for kind in ("fn", "fp"):
        for rate in rates:
            if rate == 0.0:
                transform = None
            else:
                fn_rate = rate if kind == "fn" else 0.0
                fp_rate = rate if kind == "fp" else 0.0

                def transform(mask, index, fn_rate=fn_rate, fp_rate=fp_rate):
                    rng = np.random.default_rng((cfg.seed, 23, index))
                    return corrupt_mask(mask, rng, fn_rate, fp_rate, k)

            report = run_eval(cfg, model, val_pairs, mask_transform=transform)
            sweeps[kind].append(
                {
                    "rate": rate,
                    "frechet": report["aggregate"].get("frechet"),
                    "psnr": report["aggregate"].get("psnr_mean"),
                    "psnr_changed": report["aggregate"].get("psnr_changed_mean"),
                    "psnr_unchanged": report["aggregate"].get("psnr_unchanged_mean"),
                    "report": report,
                }
            )
    payload = {
        "rates": list(rates),
        "fn_sweep": [{k2: v for k2, v in r.items() if k2 != "report"} for r in sweeps["fn"]],
        "fp_sweep": [{k2: v for k2, v in r.items() if k2 != "report"} for r in sweeps["fp"]],
    }
    if out_dir:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "robustness.json").write_text(json.dumps(payload, indent=1, sort_keys=True))
    return {**payload, "full_reports": sweeps}
