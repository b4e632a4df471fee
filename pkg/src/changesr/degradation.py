"""Blind-SR degradation pipeline for synthesizing LR training inputs.

Stage order: blur -> downsample (randomly chosen interpolation) -> additive
Gaussian noise -> probability-gated JPEG round-trip. Every random choice is
drawn from the caller's rng, so the pipeline is a pure function of
(hr, config, seed).

Images are in [-1, 1]. Configured noise magnitudes are quoted in [0, 1]
image units (the convention of 8-bit pipelines), so the noise actually added
in [-1, 1] space has twice the configured standard deviation.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .interpolation import METHODS, resize_image

BLUR_KINDS = ("isotropic", "anisotropic", "motion", "none")
SCALES = (1, 2, 4, 8, 16)


def gaussian_kernel(size: int, sigma_x: float, sigma_y: float, theta: float) -> np.ndarray:
    """Rotated anisotropic Gaussian on a size x size grid, normalized to sum 1.

    theta rotates the sigma_x axis counterclockwise; sigma_x == sigma_y gives
    an isotropic kernel for any theta.
    """
    if size % 2 == 0 or size < 3:
        raise ValueError(f"kernel size must be odd and >= 3, got {size}")
    if sigma_x <= 0 or sigma_y <= 0:
        raise ValueError(f"sigmas must be > 0, got ({sigma_x}, {sigma_y})")
    half = size // 2
    y, x = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
    c, s = math.cos(theta), math.sin(theta)
    u = c * x + s * y
    v = -s * x + c * y
    k = np.exp(-0.5 * ((u / sigma_x) ** 2 + (v / sigma_y) ** 2))
    return k / k.sum()


def motion_kernel(length: int, angle: float) -> np.ndarray:
    """Linear motion-blur kernel: a rasterized line walk of `length` taps.

    Steps are unit-length along the dominant axis (DDA walk), so angle = 0
    yields a horizontal uniform line and angle = pi/4 taps the diagonal.
    Sums to 1.
    """
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    c, s = math.cos(angle), math.sin(angle)
    denom = max(abs(c), abs(s))
    step = (c / denom, s / denom)
    offsets = np.arange(length, dtype=np.float64) - (length - 1) / 2.0
    xs = np.rint(offsets * step[0]).astype(np.int64)
    ys = np.rint(offsets * step[1]).astype(np.int64)
    half = int(max(np.abs(xs).max(), np.abs(ys).max()))
    size = 2 * half + 1
    k = np.zeros((size, size), dtype=np.float64)
    for x, y in zip(xs, ys):
        k[half + y, half + x] += 1.0
    return k / k.sum()


@dataclass(frozen=True)
class DegradationConfig:
    """Random degradation recipe; all ranges are inclusive (lo, hi) pairs."""

    scale: int = 8
    blur_weights: dict = field(
        default_factory=lambda: {"isotropic": 0.3, "anisotropic": 0.3, "motion": 0.25, "none": 0.15}
    )
    sigma_range: tuple = (0.2, 3.0)
    theta_range: tuple = (0.0, math.pi)
    motion_length_range: tuple = (3, 11)
    motion_angle_range: tuple = (0.0, math.pi)
    interp_weights: dict = field(
        default_factory=lambda: {"nearest": 0.15, "bilinear": 0.3, "bicubic": 0.3, "area": 0.25}
    )
    noise_std_range: tuple = (0.0, 0.06)
    jpeg_quality_range: tuple = (30, 95)
    jpeg_prob: float = 0.6
    preset: str = "full"

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ValueError(f"scale must be one of {SCALES}, got {self.scale}")
        for name in ("sigma_range", "motion_length_range", "noise_std_range", "jpeg_quality_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be an ordered (lo, hi) pair, got ({lo}, {hi})")
        for name, legal in (("blur_weights", BLUR_KINDS), ("interp_weights", METHODS)):
            w = getattr(self, name)
            if set(w) - set(legal):
                raise ValueError(f"{name} has unknown keys {set(w) - set(legal)}")
            vals = [w.get(k, 0.0) for k in legal]
            if min(vals) < 0 or sum(vals) == 0:
                raise ValueError(f"{name} must be nonnegative and not all zero")
        if not 0.0 <= self.jpeg_prob <= 1.0:
            raise ValueError(f"jpeg_prob must be in [0, 1], got {self.jpeg_prob}")

    @classmethod
    def full(cls, scale: int = 8) -> "DegradationConfig":
        """Full-complexity recipe (default for the smaller scaling factor)."""
        return cls(scale=scale, preset="full")

    @classmethod
    def simple(cls, scale: int = 16) -> "DegradationConfig":
        """Reduced recipe for larger scaling factors: no motion blur, gentler
        noise (half the full cap), and JPEG quality never below 70."""
        return cls(
            scale=scale,
            blur_weights={"isotropic": 0.4, "anisotropic": 0.2, "motion": 0.0, "none": 0.4},
            noise_std_range=(0.0, 0.03),
            jpeg_quality_range=(70, 95),
            jpeg_prob=0.4,
            preset="simple",
        )

    @classmethod
    def bicubic_only(cls, scale: int = 8) -> "DegradationConfig":
        """Comparison-protocol recipe: plain bicubic downsampling, nothing else."""
        return cls(
            scale=scale,
            blur_weights={"none": 1.0},
            interp_weights={"bicubic": 1.0},
            noise_std_range=(0.0, 0.0),
            jpeg_prob=0.0,
            preset="bicubic",
        )

    def with_scale(self, scale: int) -> "DegradationConfig":
        return replace(self, scale=scale)


def _weighted_choice(rng: np.random.Generator, weights: dict, ordering) -> str:
    probs = np.array([weights.get(k, 0.0) for k in ordering], dtype=np.float64)
    return ordering[rng.choice(len(ordering), p=probs / probs.sum())]


def _blur(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    for ch in range(x.shape[-1]):
        out[..., ch] = ndimage.convolve(x[..., ch], kernel, mode="mirror")
    return out


def jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    """Encode a [-1, 1] image to baseline JPEG at `quality` and decode it."""
    if not 1 <= quality <= 100:
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    u8 = np.clip(np.rint((np.asarray(image, dtype=np.float64) + 1.0) * 127.5), 0, 255)
    buf = io.BytesIO()
    try:
        PILImage.fromarray(u8.astype(np.uint8), mode="RGB").save(
            buf, format="JPEG", quality=int(quality)
        )
        buf.seek(0)
        decoded = np.asarray(PILImage.open(buf).convert("RGB"), dtype=np.float64)
    except Exception as exc:  # pragma: no cover - codec failures are environmental
        raise RuntimeError(f"JPEG round-trip failed at quality {quality}") from exc
    return (decoded / 127.5 - 1.0).astype(np.float32 if image.dtype.kind == "f" else np.float64)


def degrade(hr: np.ndarray, config: DegradationConfig, rng: np.random.Generator) -> np.ndarray:
    """Synthesize an LR image of size (H/scale, W/scale) from an HR image."""
    hr = np.asarray(hr)
    h, w = hr.shape[:2]
    if h % config.scale or w % config.scale:
        raise ValueError(f"image size {h}x{w} not divisible by scale {config.scale}")
    x = hr.astype(np.float32, copy=True)

    kind = _weighted_choice(rng, config.blur_weights, BLUR_KINDS)
    if kind in ("isotropic", "anisotropic"):
        sx = rng.uniform(*config.sigma_range)
        sy = sx if kind == "isotropic" else rng.uniform(*config.sigma_range)
        theta = 0.0 if kind == "isotropic" else rng.uniform(*config.theta_range)
        size = max(3, 2 * int(math.ceil(3.0 * max(sx, sy))) + 1)
        x = _blur(x, gaussian_kernel(size, sx, sy, theta))
    elif kind == "motion":
        length = int(rng.integers(config.motion_length_range[0], config.motion_length_range[1] + 1))
        angle = rng.uniform(*config.motion_angle_range)
        x = _blur(x, motion_kernel(length, angle))

    if config.scale > 1:
        method = _weighted_choice(rng, config.interp_weights, METHODS)
        x = resize_image(x, h // config.scale, w // config.scale, method)

    noise_std = rng.uniform(*config.noise_std_range)
    if noise_std > 0:
        # configured std is in [0, 1] units; [-1, 1] space doubles it
        x = x + rng.normal(0.0, 2.0 * noise_std, size=x.shape).astype(np.float32)
    x = np.clip(x, -1.0, 1.0)

    if config.jpeg_prob > 0 and rng.uniform() < config.jpeg_prob:
        quality = int(rng.integers(config.jpeg_quality_range[0], config.jpeg_quality_range[1] + 1))
        x = jpeg_roundtrip(x, quality)

    return np.clip(x, -1.0, 1.0)
