"""Evaluation metrics: PSNR, region-conditioned PSNR, Frechet feature distance.

The Frechet distance is computed exactly from Gaussian feature statistics
(mu, Sigma). Feature extraction is pluggable; the default is a seeded random
convolutional extractor so the whole metric pathway is testable without any
pretrained network. A perceptual extractor (e.g. a pretrained backbone) can
be dropped in by implementing the same Image -> feature-vector callable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class EmptyRegionError(ValueError):
    """Selected mask region contains no pixels."""


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 2.0) -> float:
    """Peak signal-to-noise ratio in dB; math.inf when the images are equal.

    data_range defaults to 2.0 for images in [-1, 1].
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def region_psnr(
    a: np.ndarray, b: np.ndarray, mask: np.ndarray, region: str, data_range: float = 2.0
) -> float:
    """PSNR restricted to changed (mask > 0) or unchanged (mask == 0) pixels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if mask.shape != a.shape[:2]:
        raise ValueError(f"mask {mask.shape} not congruent with images {a.shape[:2]}")
    if region == "changed":
        sel = np.asarray(mask) > 0
    elif region == "unchanged":
        sel = np.asarray(mask) == 0
    else:
        raise ValueError(f"region must be 'changed' or 'unchanged', got {region!r}")
    if not sel.any():
        raise EmptyRegionError(f"no pixels in region {region!r}")
    mse = np.mean((a[sel] - b[sel]) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


@dataclass
class FeatureStats:
    """Gaussian fit (mu, Sigma) of a feature distribution from n samples."""

    mu: np.ndarray
    sigma: np.ndarray
    n: int


def feature_stats(images, extractor) -> FeatureStats:
    """Extract features from a collection and fit mean + unbiased covariance."""
    feats = np.stack([np.asarray(extractor(img), dtype=np.float64) for img in images])
    if feats.shape[0] < 2:
        raise ValueError(f"need at least 2 images for covariance, got {feats.shape[0]}")
    mu = feats.mean(axis=0)
    centered = feats - mu
    sigma = centered.T @ centered / (feats.shape[0] - 1)
    return FeatureStats(mu=mu, sigma=sigma, n=feats.shape[0])


def _psd_sqrt_trace(s1: np.ndarray, s2: np.ndarray) -> float:
    """Tr((s1 s2)^(1/2)) via symmetric eigendecompositions.

    Uses Tr((s1 s2)^(1/2)) = Tr((s1^(1/2) s2 s1^(1/2))^(1/2)); the inner
    product is symmetrized before decomposition and slightly negative
    eigenvalues from roundoff are clamped to zero.
    """
    def sym_sqrt(m):
        vals, vecs = np.linalg.eigh((m + m.T) / 2)
        if vals.min() < -1e-6:
            raise FloatingPointError(
                f"covariance is not PSD within tolerance (min eigenvalue {vals.min():.3e})"
            )
        vals = np.clip(vals, 0.0, None)
        return (vecs * np.sqrt(vals)) @ vecs.T

    root1 = sym_sqrt(s1)
    inner = root1 @ s2 @ root1
    vals = np.linalg.eigvalsh((inner + inner.T) / 2)
    if vals.min() < -1e-6:
        raise FloatingPointError(
            f"product matrix is not PSD within tolerance (min eigenvalue {vals.min():.3e})"
        )
    return float(np.sqrt(np.clip(vals, 0.0, None)).sum())


def frechet_distance(s1: FeatureStats, s2: FeatureStats) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), clamped at >= 0."""
    if s1.mu.shape != s2.mu.shape:
        raise ValueError(f"feature dims differ: {s1.mu.shape} vs {s2.mu.shape}")
    diff = s1.mu - s2.mu
    value = float(diff @ diff + np.trace(s1.sigma) + np.trace(s2.sigma)) - 2.0 * _psd_sqrt_trace(
        s1.sigma, s2.sigma
    )
    return max(value, 0.0)


@dataclass
class ToyExtractor:
    """Seeded random strided conv bank: 2 layers, tanh, global average pool.

    Weights are frozen at construction from the seed, so features are a
    deterministic function of (tag, seed, image). Not perceptual; it exists
    to make the Frechet pathway exercisable end to end.
    """

    seed: int
    dim: int
    tag: str = "toy"
    hidden: int = 12
    _w1: np.ndarray = field(init=False, repr=False)
    _b1: np.ndarray = field(init=False, repr=False)
    _w2: np.ndarray = field(init=False, repr=False)
    _b2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.dim < 8:
            raise ValueError(f"feature dim must be >= 8, got {self.dim}")
        rng = np.random.default_rng(self.seed)
        self._w1 = rng.normal(0, 0.5, size=(self.hidden, 3, 3, 3))
        self._b1 = rng.normal(0, 0.1, size=self.hidden)
        self._w2 = rng.normal(0, 0.5, size=(self.dim, self.hidden, 3, 3))
        self._b2 = rng.normal(0, 0.1, size=self.dim)

    def __call__(self, image: np.ndarray) -> np.ndarray:
        x = np.asarray(image, dtype=np.float64)
        if x.ndim == 2:
            x = x[..., None]
        if x.shape[-1] != 3:
            x = np.repeat(x[..., :1], 3, axis=-1)
        h = np.tanh(_conv_stride2(x, self._w1) + self._b1)
        h = np.tanh(_conv_stride2(h, self._w2) + self._b2)
        return h.mean(axis=(0, 1))


def _conv_stride2(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """3x3 stride-2 valid convolution for H x W x Cin input, (Cout, Cin, 3, 3) weights."""
    h, wd = x.shape[:2]
    oh, ow = (h - 3) // 2 + 1, (wd - 3) // 2 + 1
    out = np.zeros((oh, ow, w.shape[0]))
    for dy in range(3):
        for dx in range(3):
            patch = x[dy : dy + 2 * oh - 1 : 2, dx : dx + 2 * ow - 1 : 2]
            out += patch @ w[:, :, dy, dx].T
    return out


def toy_extractor(seed: int, dim: int = 16) -> ToyExtractor:
    """Build the default deterministic feature extractor."""
    return ToyExtractor(seed=seed, dim=dim)
