"""Change-aware denoising U-Net.

The network consumes the channel-stacked input [noisy | lr_up | ref | mask]
(see conditioning.assemble_input) plus a noise level sigma. Encoder blocks
are timestep-modulated (GroupNorm, (1+w)*f+b from the embedding, SiLU, conv,
optional multi-head self-attention, residual). Decoder blocks additionally
apply two decoupled spatial feature transforms per level: a semantics-guided
one whose guidance is extracted from [mask | lr_up] and a texture-guided one
extracted from [mask | ref]. Both transforms are exact identities at
initialization (zero-initialized gamma/beta heads), so an untrained guidance
path is a no-op.

Tensors are torch (B, C, H, W); sigma may be a scalar or a per-sample vector.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .conditioning import input_channels
from .edm import NumericError

SFT_MODES = ("enhanced", "original")


@dataclass(frozen=True)
class DenoiserConfig:
    """Architecture and conditioning switches for the change-aware U-Net."""

    base_channels: int = 32
    channel_mult: tuple = (1, 2, 2)
    attn_levels: tuple = (2,)
    num_heads: int = 2
    dropout_rate: float = 0.2
    num_change_classes: int = 7
    guidance_channels: int = 16
    sft_hidden: int = 32
    emb_dim: int = 128
    use_ref: bool = True
    use_mask: bool = True
    semantic_sft: bool = True
    ref_texture_sft: bool = True
    sft_mode: str = "enhanced"

    def __post_init__(self):
        if self.num_levels < 2:
            raise ValueError("need at least 2 resolution levels")
        if not set(self.attn_levels) <= set(range(self.num_levels)):
            raise ValueError(
                f"attn_levels {self.attn_levels} outside levels 0..{self.num_levels - 1}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.sft_mode not in SFT_MODES:
            raise ValueError(f"sft_mode must be one of {SFT_MODES}, got {self.sft_mode!r}")
        if self.base_channels % 8:
            raise ValueError("base_channels must be divisible by 8 (GroupNorm groups)")
        if (self.semantic_sft or self.ref_texture_sft) and not self.use_mask:
            raise ValueError("SFT guidance requires the mask condition")
        if self.ref_texture_sft and not self.use_ref:
            raise ValueError("texture-guided SFT requires the ref condition")

    @property
    def num_levels(self) -> int:
        return len(self.channel_mult)

    @property
    def in_channels(self) -> int:
        return input_channels(self.num_change_classes, self.use_ref, self.use_mask)

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_switches(self, **kwargs) -> "DenoiserConfig":
        return replace(self, **kwargs)


def _groups(ch: int) -> int:
    return min(8, ch)


def _zero_(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


def sigma_embedding(sigma: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of c_noise = ln(sigma)/4 over dim/2 geometric freqs.

    Returns [sin(c * f_0..), cos(c * f_0..)] with f_k spanning 1 .. 1e-4.
    """
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    c_noise = torch.log(sigma) / 4.0
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=sigma.dtype, device=sigma.device) / max(half - 1, 1)
    )
    ang = c_noise[:, None] * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class TimestepEmbedding(nn.Module):
    """Sinusoidal sigma features followed by a learnable 2-layer projection."""

    def __init__(self, sinusoid_dim: int, emb_dim: int):
        super().__init__()
        if sinusoid_dim % 2:
            raise ValueError(f"sinusoid_dim must be even, got {sinusoid_dim}")
        self.sinusoid_dim = sinusoid_dim
        self.net = nn.Sequential(
            nn.Linear(sinusoid_dim, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim)
        )

    def forward(self, sigma: torch.Tensor) -> torch.Tensor:
        return self.net(sigma_embedding(sigma, self.sinusoid_dim))


class SeededDropout(nn.Module):
    """Dropout whose mask is drawn from an explicitly attached generator."""

    def __init__(self, p: float):
        super().__init__()
        self.p = p
        self.generator = None

    def forward(self, x):
        if not self.training or self.p == 0.0:
            return x
        keep = (
            torch.rand(x.shape, generator=self.generator, device=x.device, dtype=x.dtype)
            >= self.p
        )
        return x * keep / (1.0 - self.p)


class SelfAttention2d(nn.Module):
    """Multi-head self-attention over spatial positions (no internal residual)."""

    def __init__(self, channels: int, num_heads: int):
        super().__init__()
        if channels % num_heads:
            raise ValueError(f"channels {channels} not divisible by heads {num_heads}")
        self.num_heads = num_heads
        self.qkv = nn.Conv2d(channels, channels * 3, 1)
        self.proj = _zero_(nn.Conv2d(channels, channels, 1))

    def forward(self, x):
        b, c, h, w = x.shape
        dh = c // self.num_heads
        q, k, v = self.qkv(x).reshape(b, 3, self.num_heads, dh, h * w).unbind(1)
        logits = torch.einsum("bhdi,bhdj->bhij", q, k) / math.sqrt(dh)
        attn = torch.softmax(logits, dim=-1)
        out = torch.einsum("bhij,bhdj->bhdi", attn, v).reshape(b, c, h, w)
        return self.proj(out)


class ModulatedConvPath(nn.Module):
    """GroupNorm -> (1 + w(t)) * f + b(t) -> SiLU -> dropout -> 3x3 conv."""

    def __init__(self, in_ch: int, out_ch: int, emb_dim: int, dropout: float, zero_out=True):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(in_ch), in_ch)
        self.mod = _zero_(nn.Linear(emb_dim, 2 * in_ch))
        self.dropout = SeededDropout(dropout)
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        if zero_out:
            _zero_(self.conv)

    def forward(self, x, emb):
        w, b = self.mod(emb)[:, :, None, None].chunk(2, dim=1)
        h = self.norm(x) * (1.0 + w) + b
        return self.conv(self.dropout(F.silu(h)))


class EncoderBlock(nn.Module):
    """Residual timestep-modulated block with optional self-attention."""

    def __init__(self, channels: int, emb_dim: int, dropout: float, attend: bool, num_heads: int):
        super().__init__()
        self.path = ModulatedConvPath(channels, channels, emb_dim, dropout)
        self.attn = SelfAttention2d(channels, num_heads) if attend else None
        self.attn_norm = nn.GroupNorm(_groups(channels), channels) if attend else None

    def forward(self, x, emb):
        x = x + self.path(x, emb)
        if self.attn is not None:
            x = x + self.attn(self.attn_norm(x))
        return x


class SpatialFeatureTransform(nn.Module):
    """Guidance-driven feature modulation F -> gamma * F + beta.

    In "enhanced" mode the gamma/beta heads see [guidance | features]; in
    "original" mode they see the guidance alone. gamma = 1 + dgamma with the
    final layers of both heads zero-initialized, so a fresh module is the
    identity map.
    """

    def __init__(self, feat_ch: int, guide_ch: int, hidden: int, mode: str = "enhanced"):
        super().__init__()
        if mode not in SFT_MODES:
            raise ValueError(f"mode must be one of {SFT_MODES}, got {mode!r}")
        self.mode = mode
        in_ch = guide_ch + feat_ch if mode == "enhanced" else guide_ch
        self.trunk = nn.Conv2d(in_ch, hidden, 3, padding=1)
        self.gamma = _zero_(nn.Conv2d(hidden, feat_ch, 3, padding=1))
        self.beta = _zero_(nn.Conv2d(hidden, feat_ch, 3, padding=1))

    def gamma_beta(self, features, guidance):
        if features.shape[-2:] != guidance.shape[-2:]:
            raise ValueError(
                f"guidance {tuple(guidance.shape[-2:])} not congruent with "
                f"features {tuple(features.shape[-2:])}"
            )
        z = torch.cat([guidance, features], dim=1) if self.mode == "enhanced" else guidance
        h = F.silu(self.trunk(z))
        return 1.0 + self.gamma(h), self.beta(h)

    def forward(self, features, guidance):
        gamma, beta = self.gamma_beta(features, guidance)
        return gamma * features + beta


class GuidanceExtractor(nn.Module):
    """Strided conv stack mapping [mask | partner] to one decoder level's grid."""

    def __init__(self, in_ch: int, out_ch: int, level: int):
        super().__init__()
        layers = []
        ch = in_ch
        for _ in range(level):
            layers += [nn.Conv2d(ch, out_ch, 3, stride=2, padding=1), nn.SiLU()]
            ch = out_ch
        if level == 0:
            layers += [nn.Conv2d(ch, out_ch, 3, padding=1), nn.SiLU()]
            ch = out_ch
        layers.append(nn.Conv2d(ch, out_ch, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class DecoderBlock(nn.Module):
    """Decoder block: skip concat, modulated conv, decoupled SFTs, attention."""

    def __init__(
        self,
        in_ch: int,
        skip_ch: int,
        out_ch: int,
        emb_dim: int,
        guide_ch: int,
        sft_hidden: int,
        dropout: float,
        attend: bool,
        num_heads: int,
        semantic_sft: bool,
        ref_texture_sft: bool,
        sft_mode: str,
    ):
        super().__init__()
        cat_ch = in_ch + skip_ch
        self.path = ModulatedConvPath(cat_ch, out_ch, emb_dim, dropout)
        self.skip_proj = nn.Conv2d(cat_ch, out_ch, 1)
        self.sft_semantic = (
            SpatialFeatureTransform(out_ch, guide_ch, sft_hidden, sft_mode)
            if semantic_sft
            else None
        )
        self.sft_ref_texture = (
            SpatialFeatureTransform(out_ch, guide_ch, sft_hidden, sft_mode)
            if ref_texture_sft
            else None
        )
        self.attn = SelfAttention2d(out_ch, num_heads) if attend else None
        self.attn_norm = nn.GroupNorm(_groups(out_ch), out_ch) if attend else None

    def forward(self, x, skip, emb, sem_guide, tex_guide):
        if self.sft_semantic is not None and sem_guide is None:
            raise ValueError("decoder block needs semantic guidance features")
        if self.sft_ref_texture is not None and tex_guide is None:
            raise ValueError("decoder block needs ref-texture guidance features")
        z = torch.cat([x, skip], dim=1)
        u = self.path(z, emb)
        if self.sft_semantic is not None:
            u = self.sft_semantic(u, sem_guide)
        if self.sft_ref_texture is not None:
            u = self.sft_ref_texture(u, tex_guide)
        if self.attn is not None:
            u = u + self.attn(self.attn_norm(u))
        return self.skip_proj(z) + u


class ChangeAwareUNet(nn.Module):
    """U-Net denoiser backbone F(x_scaled, sigma) with change-prior decoding."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        chs = [config.base_channels * m for m in config.channel_mult]
        emb = config.emb_dim
        attn = set(config.attn_levels)
        self.time_embed = TimestepEmbedding(config.base_channels, emb)
        self.conv_in = nn.Conv2d(config.in_channels, chs[0], 3, padding=1)

        self.enc_blocks = nn.ModuleList(
            EncoderBlock(ch, emb, config.dropout_rate, lvl in attn, config.num_heads)
            for lvl, ch in enumerate(chs)
        )
        self.downs = nn.ModuleList(
            nn.Conv2d(chs[l], chs[l + 1], 3, stride=2, padding=1) for l in range(len(chs) - 1)
        )
        self.middle = EncoderBlock(
            chs[-1], emb, config.dropout_rate, (len(chs) - 1) in attn, config.num_heads
        )

        guide_in = (config.num_change_classes + 1) + 3
        if config.semantic_sft:
            self.semantic_extractors = nn.ModuleList(
                GuidanceExtractor(guide_in, config.guidance_channels, l)
                for l in range(len(chs))
            )
        if config.ref_texture_sft:
            self.ref_texture_extractors = nn.ModuleList(
                GuidanceExtractor(guide_in, config.guidance_channels, l)
                for l in range(len(chs))
            )

        # ups convert channels before each decoder level, so in_ch == skip_ch
        self.dec_blocks = nn.ModuleList(
            DecoderBlock(
                chs[l],
                chs[l],
                chs[l],
                emb,
                config.guidance_channels,
                config.sft_hidden,
                config.dropout_rate,
                l in attn,
                config.num_heads,
                config.semantic_sft,
                config.ref_texture_sft,
                config.sft_mode,
            )
            for l in range(len(chs))
        )
        self.ups = nn.ModuleList(
            nn.Conv2d(chs[l + 1], chs[l], 3, padding=1) for l in range(len(chs) - 1)
        )
        self.out_norm = nn.GroupNorm(_groups(chs[0]), chs[0])
        self.out_conv = _zero_(nn.Conv2d(chs[0], 3, 3, padding=1))

    def set_dropout_generator(self, generator):
        """Route all dropout masks through one explicit torch.Generator."""
        for m in self.modules():
            if isinstance(m, SeededDropout):
                m.generator = generator

    def _sigma_tensor(self, sigma, batch: int, like: torch.Tensor) -> torch.Tensor:
        sig = torch.as_tensor(
            np.asarray(sigma, dtype=np.float64), dtype=like.dtype, device=like.device
        )
        if sig.ndim == 0:
            sig = sig.expand(batch)
        if sig.shape[0] != batch:
            raise ValueError(f"sigma batch {sig.shape[0]} does not match input batch {batch}")
        return sig

    def _condition_slices(self, x):
        cfg = self.config
        lr_up = x[:, 3:6]
        at = 6
        ref = None
        if cfg.use_ref:
            ref = x[:, at : at + 3]
            at += 3
        mask = x[:, at:] if cfg.use_mask else None
        return lr_up, ref, mask

    def extract_guidance(self, x: torch.Tensor):
        """Per-level guidance features from the condition channels of x.

        These depend only on (mask, lr_up, ref), so samplers can compute
        them once per condition set and pass them back through forward.
        """
        cfg = self.config
        lr_up, ref, mask = self._condition_slices(x)
        sem_guides = tex_guides = None
        if cfg.semantic_sft:
            sem_in = torch.cat([mask, lr_up], dim=1)
            sem_guides = [g(sem_in) for g in self.semantic_extractors]
        if cfg.ref_texture_sft:
            tex_in = torch.cat([mask, ref], dim=1)
            tex_guides = [g(tex_in) for g in self.ref_texture_extractors]
        return sem_guides, tex_guides

    def _run(self, x: torch.Tensor, sigma, guides=None) -> torch.Tensor:
        cfg = self.config
        if x.shape[1] != cfg.in_channels:
            raise ValueError(
                f"expected {cfg.in_channels} input channels for this config, got {x.shape[1]}"
            )
        sig = self._sigma_tensor(sigma, x.shape[0], x)
        emb = self.time_embed(sig)
        sem_guides, tex_guides = guides if guides is not None else self.extract_guidance(x)

        h = self.conv_in(x)
        skips = []
        for lvl, block in enumerate(self.enc_blocks):
            h = block(h, emb)
            skips.append(h)
            if lvl < len(self.downs):
                h = self.downs[lvl](h)
        h = self.middle(h, emb)
        for lvl in reversed(range(len(self.dec_blocks))):
            h = self.dec_blocks[lvl](
                h,
                skips[lvl],
                emb,
                sem_guides[lvl] if sem_guides is not None else None,
                tex_guides[lvl] if tex_guides is not None else None,
            )
            if lvl > 0:
                h = self.ups[lvl - 1](F.interpolate(h, scale_factor=2, mode="nearest"))
        return self.out_conv(F.silu(self.out_norm(h)))

    def forward(self, x: torch.Tensor, sigma, guides=None) -> torch.Tensor:
        out = self._run(x, sigma, guides)
        if not torch.isfinite(out).all():
            raise NumericError(self._locate_nonfinite(x, sigma))
        return out

    def _locate_nonfinite(self, x, sigma) -> str:
        """Re-run with hooks to name the first module emitting non-finite values."""
        names = {id(m): n for n, m in self.named_modules()}
        offender = []

        def hook(module, args, output):
            if not offender and torch.is_tensor(output) and not torch.isfinite(output).all():
                offender.append(names.get(id(module), module.__class__.__name__))

        handles = [m.register_forward_hook(hook) for m in self.modules()]
        try:
            self._run(x, sigma)
        finally:
            for hd in handles:
                hd.remove()
        where = offender[0] if offender else "output"
        return f"non-finite values first produced in module {where!r}"
