"""Command-line entry points wiring the library into reproducible experiments.

Subcommands:
    gen-data    write a synthetic change-pair dataset tree to disk
    degrade     preview LR synthesis for given seeds
    train       optimize a model per an experiment config
    sample      super-resolve one LR + Ref + mask triplet to PNG
    eval        metric report plus a side-by-side image grid
    ablate      run the condition/decoder switch matrix and tabulate
    robustness  sweep synthetic FN/FP mask corruption and report degradation

Exit codes: 0 success, 2 usage, 3 config schema violation, 4 missing or
invalid data files, 5 checkpoint mismatch, 6 numeric failure, 1 other error.
Every subcommand writes a run.json provenance record (resolved config, seed,
config hash, package version) into its output directory. The environment
variable CHANGESR_OUT_ROOT sets the root against which relative --out paths
are resolved.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import __version__, experiments
from .config import (
    ConfigError,
    ExperimentConfig,
    load_config,
    resolve_out_dir,
    write_run_record,
)
from .conditioning import build_condition_set
from .datagen import (
    DatasetValidationError,
    DEFAULT_PALETTE,
    corrupt_mask,
    image_to_u8,
    u8_to_image,
    write_dataset,
)
from .degradation import degrade
from .edm import NumericError
from .training import (
    CheckpointError,
    TrainingDivergedError,
    degrade_for_eval,
    load_model,
    sample_sr,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_CHECKPOINT = 5
EXIT_NUMERIC = 6
EXIT_OTHER = 1


def _load_image(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    return u8_to_image(np.asarray(PILImage.open(path).convert("RGB")))


def _load_mask(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"mask not found: {path}")
    return np.asarray(PILImage.open(path)).astype(np.int32)


def _save_image(path, img):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(image_to_u8(img), mode="RGB").save(path)


def _colorize_mask(mask: np.ndarray) -> np.ndarray:
    out = np.full(mask.shape + (3,), -1.0, dtype=np.float32)
    for cls in np.unique(mask):
        if cls == 0:
            continue
        color = DEFAULT_PALETTE[(int(cls) - 1) % len(DEFAULT_PALETTE)].base_color
        out[mask == cls] = np.asarray(color, dtype=np.float32)
    return out


def save_grid(path, panels):
    """PNG mosaic; panels is a list of rows, each a list of HxWx3 images."""
    rows = []
    for row in panels:
        h = max(p.shape[0] for p in row)
        cells = []
        for p in row:
            if p.shape[0] != h:  # upscale small panels (e.g. LR) for display
                reps = h // p.shape[0]
                p = np.repeat(np.repeat(p, reps, axis=0), reps, axis=1)
            cells.append(p)
        rows.append(np.concatenate(cells, axis=1))
    _save_image(path, np.concatenate(rows, axis=0))


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed, train=replace(cfg.train, seed=args.seed))
    if getattr(args, "scale", None) is not None:
        cfg = replace(cfg, scale=args.scale)
    if getattr(args, "steps", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, total_steps=args.steps))
    switches = {}
    if getattr(args, "no_ref", False):
        switches.update(use_ref=False, ref_texture_sft=False)
    if getattr(args, "no_mask", False):
        switches.update(use_mask=False, semantic_sft=False, ref_texture_sft=False)
    if getattr(args, "no_semantic_sft", False):
        switches["semantic_sft"] = False
    if getattr(args, "no_texture_sft", False):
        switches["ref_texture_sft"] = False
    if getattr(args, "sft_mode", None):
        switches["sft_mode"] = args.sft_mode
    if switches:
        cfg = replace(cfg, train=replace(cfg.train, **switches))
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _out_dir(cfg: ExperimentConfig, default: str) -> Path:
    return resolve_out_dir(cfg.out_dir, default)


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(cfg, "dataset")
    # val pairs first so a tree round-trips into the same split (see load_pairs)
    pairs = experiments.synthetic_pairs(cfg, "val") + experiments.synthetic_pairs(cfg, "train")
    for i, pair in enumerate(pairs):
        pair.pair_id = f"{i:05d}"
    write_dataset(out, pairs, num_classes=cfg.data.num_classes)
    write_run_record(out, "gen-data", sys.argv[1:], cfg)
    print(f"wrote {len(pairs)} pairs to {out}")
    return EXIT_OK


def cmd_degrade(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(cfg, "degrade-preview")
    pairs = experiments.load_pairs(cfg, "val")[: args.count]
    dc = cfg.degradation_config()
    for seed in args.seeds:
        rng = np.random.default_rng(seed)
        for pair in pairs:
            lr = degrade(pair.hr, dc, rng)
            _save_image(out / f"seed{seed}" / f"{pair.pair_id}_lr.png", lr)
    write_run_record(out, "degrade", sys.argv[1:], cfg)
    print(f"wrote {len(pairs) * len(args.seeds)} LR previews to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(cfg, "train-run")
    write_run_record(out, "train", sys.argv[1:], cfg)
    model, ckpts, log = experiments.run_training(cfg, out_dir=out)
    print(f"trained {cfg.train.total_steps} steps; final loss {log[-1]['loss']:.5f}; "
          f"checkpoint {ckpts[-1]}")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = _config_from_args(args)
    lr = _load_image(args.lr)
    ref = _load_image(args.ref)
    mask = _load_mask(args.mask)
    if ref.shape[0] % lr.shape[0]:
        raise ConfigError(
            f"ref height {ref.shape[0]} is not an integer multiple of LR height {lr.shape[0]}"
        )
    scale = ref.shape[0] // lr.shape[0]
    model = load_model(args.checkpoint)
    cond = build_condition_set(lr, ref, mask, scale, model.config.num_change_classes)
    sr = sample_sr(model, cond, cfg.sigma, cfg.train.sampler_steps, np.random.default_rng(cfg.seed))
    out_path = Path(args.out or "sr.png")
    _save_image(out_path, sr)
    write_run_record(out_path.parent, "sample", sys.argv[1:], cfg)
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(cfg, "eval-run")
    model = load_model(args.checkpoint)
    val_pairs = experiments.load_pairs(cfg, "val")

    transform = None
    if args.fn_rate or args.fp_rate:
        def transform(mask, index):
            rng = np.random.default_rng((cfg.seed, 23, index))
            return corrupt_mask(mask, rng, args.fn_rate, args.fp_rate, cfg.data.num_classes)

    report = experiments.run_eval(cfg, model, val_pairs, mask_transform=transform)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))

    dc = cfg.degradation_config()
    panels = []
    for i, pair in enumerate(val_pairs[: args.grid_rows]):
        lr = degrade_for_eval(pair.hr, dc, cfg.seed, i)
        mask = pair.mask if transform is None else transform(pair.mask, i)
        cond = build_condition_set(lr, pair.ref, mask, cfg.scale, model.config.num_change_classes)
        sr = sample_sr(model, cond, cfg.sigma, cfg.train.sampler_steps,
                       np.random.default_rng((cfg.seed, 7, i)))
        panels.append([lr, pair.ref, _colorize_mask(mask), sr, pair.hr])
    if panels:
        save_grid(out / "grid.png", panels)
    write_run_record(out, "eval", sys.argv[1:], cfg)
    agg = report["aggregate"]
    print(f"eval over {report['n']} examples: psnr={agg.get('psnr_mean')}, "
          f"frechet={agg.get('frechet')}; wrote {out / 'report.json'}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(cfg, "ablation")
    out.mkdir(parents=True, exist_ok=True)
    write_run_record(out, "ablate", sys.argv[1:], cfg)
    payload = experiments.run_ablation(cfg, seeds=args.seeds, out_dir=out)
    print(f"{'row':<14}{'frechet':>12}{'psnr':>10}{'rank':>6}")
    for t in payload["summary"]:
        print(f"{t['row']:<14}{t['frechet_mean']:>12.4f}{t['psnr_mean']:>10.3f}{t['composite_rank']:>6}")
    print(f"wrote {out / 'ablation.json'}")
    return EXIT_OK


def cmd_robustness(args) -> int:
    cfg = _config_from_args(args)
    out = _out_dir(cfg, "robustness")
    rates = tuple(args.fn_rate or experiments.ROBUSTNESS_RATES)
    payload = experiments.run_robustness(cfg, args.checkpoint, out_dir=out, rates=rates)
    write_run_record(out, "robustness", sys.argv[1:], cfg)
    for kind in ("fn_sweep", "fp_sweep"):
        print(kind)
        for row in payload[kind]:
            print(f"  rate={row['rate']:<5} frechet={row['frechet']:.4f} psnr={row['psnr']:.3f}")
    print(f"wrote {out / 'robustness.json'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _rates(text):
    return [float(tok) for tok in text.split(",") if tok.strip() != ""]


def _seeds(text):
    return [int(tok) for tok in text.split(",") if tok.strip() != ""]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="changesr",
        description="change-aware reference-based super-resolution experiments",
    )
    parser.add_argument("--version", action="version", version=f"changesr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default=True):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--seed", type=int, help="global seed override")
        p.add_argument("--scale", type=int, choices=(8, 16), help="scaling factor")
        p.add_argument("--steps", type=int, help="training steps override")
        if out_default:
            p.add_argument("--out", help="output directory (relative to $CHANGESR_OUT_ROOT)")
        p.add_argument("--sft-mode", choices=("enhanced", "original"))
        p.add_argument("--no-ref", action="store_true", help="drop the Ref condition")
        p.add_argument("--no-mask", action="store_true", help="drop the change-mask condition")
        p.add_argument("--no-semantic-sft", action="store_true")
        p.add_argument("--no-texture-sft", action="store_true")

    p = sub.add_parser("gen-data", help="write a synthetic dataset tree")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("degrade", help="preview LR synthesis for given seeds")
    common(p)
    p.add_argument("--seeds", type=_seeds, default=[0], help="comma-separated seeds")
    p.add_argument("--count", type=int, default=4, help="pairs to preview")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="super-resolve an LR/Ref/mask triplet")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lr", required=True, help="LR image PNG")
    p.add_argument("--ref", required=True, help="reference image PNG")
    p.add_argument("--mask", required=True, help="change mask PNG (class indices)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="metric report and image grid")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--fn-rate", type=float, default=0.0, help="corrupt masks: FN rate")
    p.add_argument("--fp-rate", type=float, default=0.0, help="corrupt masks: FP rate")
    p.add_argument("--grid-rows", type=int, default=6)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the condition/decoder switch matrix")
    common(p)
    p.add_argument("--seeds", type=_seeds, default=[0], help="comma-separated seeds")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("robustness", help="sweep FN/FP mask corruption rates")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--fn-rate", type=_rates, default=None,
                   help="comma-separated sweep rates (default 0,0.25,0.5,1)")
    p.add_argument("--fp-rate", type=_rates, default=None,
                   help="accepted alias; sweeps always cover both FN and FP")
    p.set_defaults(func=cmd_robustness)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"changesr-error code={EXIT_CONFIG} kind=config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, DatasetValidationError) as exc:
        msg = str(exc).replace("\n", "; ")
        print(f"changesr-error code={EXIT_MISSING} kind=missing-data: {msg}", file=sys.stderr)
        return EXIT_MISSING
    except CheckpointError as exc:
        print(f"changesr-error code={EXIT_CHECKPOINT} kind=checkpoint: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (NumericError, TrainingDivergedError, FloatingPointError) as exc:
        print(f"changesr-error code={EXIT_NUMERIC} kind=numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"changesr-error code={EXIT_CONFIG} kind=invalid-argument: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # pragma: no cover - catch-all for unexpected failures
        print(f"changesr-error code={EXIT_OTHER} kind=internal: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
