"""Training loop, functional Adam, checkpointing, sampling and validation.

Reproducibility contract: with a fixed seed and the single-worker data path
used here, two runs produce bit-identical checkpoints and metric values. All
numpy randomness flows through one np.random.Generator; dropout masks come
from one explicitly seeded torch.Generator; model initialization is seeded
via build_model.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import edm
from .conditioning import build_condition_set, condition_channels
from .datagen import DegradationConfig, make_example
from .denoiser import ChangeAwareUNet, DenoiserConfig
from .metrics import EmptyRegionError, feature_stats, frechet_distance, psnr, region_psnr, toy_extractor

CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


class CheckpointError(RuntimeError):
    """Checkpoint refused: version, integrity, or config mismatch."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings plus the condition/decoder ablation switches."""

    batch_size: int = 8
    total_steps: int = 5000
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    use_lr: bool = True
    use_ref: bool = True
    use_mask: bool = True
    semantic_sft: bool = True
    ref_texture_sft: bool = True
    sft_mode: str = "enhanced"
    crop_size: int = 64
    checkpoint_every: int = 0  # 0: only final
    sampler_steps: int = 18

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"betas must be in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not self.use_lr:
            raise ValueError("the LR condition cannot be disabled")

    def apply_switches(self, model_config: DenoiserConfig) -> DenoiserConfig:
        """Project the condition/decoder switches onto a model config."""
        return model_config.with_switches(
            use_ref=self.use_ref,
            use_mask=self.use_mask,
            semantic_sft=self.semantic_sft,
            ref_texture_sft=self.ref_texture_sft,
            sft_mode=self.sft_mode,
        )


@dataclass
class AdamState:
    """First/second moment accumulators keyed like the parameter dict."""

    m: dict
    v: dict

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls(
            m={k: p * 0 for k, p in params.items()},
            v={k: p * 0 for k, p in params.items()},
        )


def adam_step(params: dict, grads: dict, state: AdamState, t: int, config: TrainConfig):
    """One bias-corrected Adam update; pure, returns (new_params, new_state).

    Works on dicts of torch tensors or numpy arrays alike.
    """
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ValueError("params, grads, and state must share the same keys")
    new_params, new_m, new_v = {}, {}, {}
    bc1 = 1.0 - config.beta1**t
    bc2 = 1.0 - config.beta2**t
    for k, p in params.items():
        g = grads[k]
        if tuple(g.shape) != tuple(p.shape):
            raise ValueError(f"gradient shape {tuple(g.shape)} != param shape {tuple(p.shape)} for {k}")
        m = config.beta1 * state.m[k] + (1.0 - config.beta1) * g
        v = config.beta2 * state.v[k] + (1.0 - config.beta2) * g**2
        new_params[k] = p - config.learning_rate * (m / bc1) / ((v / bc2) ** 0.5 + config.eps)
        new_m[k], new_v[k] = m, v
    return new_params, AdamState(m=new_m, v=new_v)


def build_model(config: DenoiserConfig, seed: int) -> ChangeAwareUNet:
    """Construct a U-Net with seeded initialization."""
    torch.manual_seed(seed)
    return ChangeAwareUNet(config)


# ---------------------------------------------------------------------------
# checkpoint container: npz of parameter arrays plus a JSON metadata entry
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: ChangeAwareUNet, step: int, seed: int, extra: dict = None):
    """Write a versioned checkpoint (parameters, config, config hash, step, seed)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "config_hash": model.config.config_hash(),
        "step": int(step),
        "seed": int(seed),
    }
    if extra:
        meta.update(extra)
    np.savez(path, __meta__=json.dumps(meta, sort_keys=True), **arrays)
    return path


def _config_from_dict(d: dict) -> DenoiserConfig:
    d = dict(d)
    for key in ("channel_mult", "attn_levels"):
        d[key] = tuple(d[key])
    return DenoiserConfig(**d)


def load_checkpoint(path, expected_config: DenoiserConfig = None):
    """Load (state_dict, meta); refuses tampered or incompatible checkpoints."""
    with np.load(Path(path), allow_pickle=False) as zf:
        meta = json.loads(str(zf["__meta__"]))
        arrays = {k[len("param/") :]: zf[k] for k in zf.files if k.startswith("param/")}
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {meta.get('format_version')}"
        )
    stored = _config_from_dict(meta["config"])
    if stored.config_hash() != meta["config_hash"]:
        raise CheckpointError("checkpoint config hash does not match its stored config")
    if expected_config is not None and expected_config != stored:
        exp, got = asdict(expected_config), asdict(stored)
        bad = next(k for k in sorted(exp) if exp[k] != got[k])
        raise CheckpointError(
            f"checkpoint config mismatch at {bad!r}: checkpoint has {got[bad]!r}, "
            f"expected {exp[bad]!r}"
        )
    state = {k: torch.from_numpy(v.copy()) for k, v in arrays.items()}
    return state, meta


def load_model(path, expected_config: DenoiserConfig = None) -> ChangeAwareUNet:
    """Rebuild a model from a checkpoint."""
    state, meta = load_checkpoint(path, expected_config)
    model = ChangeAwareUNet(_config_from_dict(meta["config"]))
    model.load_state_dict(state)
    model.eval()
    return model


# ---------------------------------------------------------------------------
# data plumbing
# ---------------------------------------------------------------------------

@dataclass
class PairDataSource:
    """Single-worker sampler: random pair, shared random crop, fresh degradation."""

    pairs: list
    degradation: DegradationConfig
    crop_size: int

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("data source needs at least one pair")

    def sample_batch(self, rng: np.random.Generator, n: int) -> list:
        idx = rng.integers(0, len(self.pairs), size=n)
        return [make_example(self.pairs[i], self.crop_size, self.degradation, rng) for i in idx]


def batch_tensors(examples, scale: int, num_classes: int, use_ref: bool, use_mask: bool, dtype=torch.float32):
    """Stack examples into (y, cond) torch tensors in BCHW layout."""
    y = np.stack([ex.hr for ex in examples]).transpose(0, 3, 1, 2)
    cond = np.stack(
        [
            condition_channels(
                build_condition_set(ex.lr, ex.ref, ex.mask, scale, num_classes),
                use_ref,
                use_mask,
            )
            for ex in examples
        ]
    ).transpose(0, 3, 1, 2)
    return (
        torch.from_numpy(np.ascontiguousarray(y)).to(dtype),
        torch.from_numpy(np.ascontiguousarray(cond)).to(dtype),
    )


def make_network(model: ChangeAwareUNet):
    """Adapter with the raw-network signature used by edm.denoise."""

    def network(x_scaled, sigma, cond):
        return model(torch.cat([x_scaled, cond], dim=1), sigma)

    return network


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train(
    config: TrainConfig,
    data: PairDataSource,
    model: ChangeAwareUNet,
    sigma_params: edm.SigmaParams = None,
    out_dir=None,
    log_every: int = 1,
):
    """Optimize the model on the weighted denoising objective.

    Returns (checkpoint_paths, metric_log). Checkpoints are written under
    out_dir (if given) at the configured cadence plus a final one; the metric
    log is also appended to out_dir/metrics.jsonl.
    """
    sp = sigma_params or edm.SigmaParams()
    rng = np.random.default_rng(config.seed)
    drop_gen = torch.Generator().manual_seed(config.seed + 1)
    model.set_dropout_generator(drop_gen)
    model.train()
    network = make_network(model)
    mcfg = model.config

    params = {k: p for k, p in model.named_parameters()}
    state = AdamState.zeros_like({k: p.detach() for k, p in params.items()})
    log, ckpts = [], []
    out_dir = Path(out_dir) if out_dir is not None else None
    log_path = out_dir / "metrics.jsonl" if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()

    for step in range(1, config.total_steps + 1):
        examples = data.sample_batch(rng, config.batch_size)
        y, cond = batch_tensors(
            examples, data.degradation.scale, mcfg.num_change_classes, mcfg.use_ref, mcfg.use_mask
        )
        sigmas = edm.sample_training_sigma(rng, sp, size=config.batch_size)
        noise = sigmas[:, None, None, None] * rng.standard_normal(tuple(y.shape))
        n = torch.from_numpy(noise).to(y.dtype)

        loss = edm.training_loss(network, y, n, sigmas, cond, sp)
        loss_val = float(loss.detach())
        if not math.isfinite(loss_val):
            raise TrainingDivergedError(
                f"non-finite loss {loss_val} at step {step}; sigmas={np.round(sigmas, 4).tolist()}"
            )
        model.zero_grad(set_to_none=True)
        loss.backward()
        grads = {k: p.grad.detach() for k, p in params.items()}
        new_params, state = adam_step(
            {k: p.detach() for k, p in params.items()}, grads, state, step, config
        )
        with torch.no_grad():
            for k, p in params.items():
                p.copy_(new_params[k])

        if step % log_every == 0 or step == config.total_steps:
            rec = {
                "step": step,
                "loss": loss_val,
                "lr": config.learning_rate,
                "wall_time": round(time.time() - t0, 3),
            }
            log.append(rec)
            if log_path:
                with log_path.open("a") as fh:
                    fh.write(json.dumps(rec) + "\n")
        if out_dir and config.checkpoint_every and step % config.checkpoint_every == 0:
            ckpts.append(
                save_checkpoint(out_dir / f"ckpt_{step:07d}.npz", model, step, config.seed)
            )
    if out_dir:
        ckpts.append(save_checkpoint(out_dir / "ckpt_final.npz", model, config.total_steps, config.seed))
    model.eval()
    return ckpts, log


# ---------------------------------------------------------------------------
# sampling and validation
# ---------------------------------------------------------------------------

def sample_sr(
    model: ChangeAwareUNet,
    conds,
    sigma_params: edm.SigmaParams,
    n_steps: int,
    rng: np.random.Generator,
):
    """Super-resolve one ConditionSet (or a list) with the Heun sampler.

    Returns an H x W x 3 array, or a list of them for a list input.
    """
    single = not isinstance(conds, (list, tuple))
    cond_list = [conds] if single else list(conds)
    mcfg = model.config
    cond_np = np.stack(
        [condition_channels(c, mcfg.use_ref, mcfg.use_mask) for c in cond_list]
    ).transpose(0, 3, 1, 2)
    cond_t = torch.from_numpy(np.ascontiguousarray(cond_np)).to(torch.float32)
    model.eval()
    with torch.no_grad():
        # guidance features depend only on the conditions; reuse across steps
        guides = model.extract_guidance(
            torch.cat([torch.zeros(cond_t.shape[0], 3, *cond_t.shape[2:]), cond_t], dim=1)
        )

    def network(x_scaled, sigma, cond):
        return model(torch.cat([x_scaled, cond], dim=1), sigma, guides=guides)

    def denoiser(x, sigma, _cond):
        xt = torch.from_numpy(np.ascontiguousarray(x.transpose(0, 3, 1, 2))).to(torch.float32)
        with torch.no_grad():
            out = edm.denoise(network, xt, float(sigma), cond_t, sigma_params)
        return out.numpy().transpose(0, 2, 3, 1).astype(np.float64)

    h, w = cond_list[0].lr_up.shape[:2]
    out = edm.heun_sample(
        denoiser, None, n_steps, sigma_params, rng, shape=(len(cond_list), h, w, 3)
    )
    out = np.clip(out, -1.0, 1.0).astype(np.float32)
    return out[0] if single else [out[i] for i in range(out.shape[0])]


def validate(
    model,
    pairs,
    scale: int,
    sigma_params: edm.SigmaParams = None,
    n_steps: int = 18,
    seed: int = 0,
    deg_config: DegradationConfig = None,
    extractor=None,
    mask_transform=None,
    ref_override=None,
    batch: int = 16,
):
    """Evaluate SR quality on held-out pairs with a fixed sampling seed.

    Per example: PSNR plus region PSNR over the change mask; over the whole
    set: Frechet distance between SR and HR feature statistics. mask_transform
    (mask, index) -> mask and ref_override (list of ref images) support
    robustness and reference-swap probes. Metric failures on individual
    examples are recorded and skipped in aggregation.
    """
    if isinstance(model, (str, Path)):
        model = load_model(model)
    sp = sigma_params or edm.SigmaParams()
    dc = deg_config or DegradationConfig.bicubic_only(scale)
    if dc.scale != scale:
        dc = dc.with_scale(scale)
    ext = extractor or toy_extractor(seed=0, dim=16)
    if not pairs:
        raise ValueError("validation needs at least one pair")

    mcfg = model.config
    conds, masks = [], []
    for i, pair in enumerate(pairs):
        lr = degrade_for_eval(pair.hr, dc, seed, i)
        mask = pair.mask if mask_transform is None else mask_transform(pair.mask, i)
        ref = pair.ref if ref_override is None else ref_override[i]
        conds.append(build_condition_set(lr, ref, mask, scale, mcfg.num_change_classes))
        masks.append(mask)

    srs = []
    for lo in range(0, len(conds), batch):
        chunk = conds[lo : lo + batch]
        rng = np.random.default_rng((seed, 7, lo))
        out = sample_sr(model, chunk, sp, n_steps, rng)
        srs.extend(out if isinstance(out, list) else [out])

    rows = []
    for pair, mask, sr in zip(pairs, masks, srs):
        row = {"id": pair.pair_id}
        try:
            row["psnr"] = psnr(sr, pair.hr)
        except Exception as exc:
            row["psnr_error"] = str(exc)
        for region in ("changed", "unchanged"):
            try:
                row[f"psnr_{region}"] = region_psnr(sr, pair.hr, mask, region)
            except EmptyRegionError:
                row[f"psnr_{region}"] = None
            except Exception as exc:
                row[f"psnr_{region}_error"] = str(exc)
        rows.append(row)

    agg = {}
    for key in ("psnr", "psnr_changed", "psnr_unchanged"):
        vals = [r[key] for r in rows if isinstance(r.get(key), (int, float)) and r[key] is not None]
        agg[f"{key}_mean"] = float(np.mean(vals)) if vals else None
    try:
        agg["frechet"] = frechet_distance(feature_stats(srs, ext), feature_stats([p.hr for p in pairs], ext))
    except Exception as exc:
        agg["frechet_error"] = str(exc)
    return {"n": len(rows), "examples": rows, "aggregate": agg, "sampler_steps": n_steps, "seed": seed}


def degrade_for_eval(hr, deg_config: DegradationConfig, seed: int, index: int):
    """Deterministic per-example LR synthesis for evaluation."""
    return degrade_with_seed(hr, deg_config, (seed, 11, index))


def degrade_with_seed(hr, deg_config: DegradationConfig, seed):
    from .degradation import degrade

    return degrade(hr, deg_config, np.random.default_rng(seed))
