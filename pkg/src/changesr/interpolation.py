"""Separable image resampling used by conditioning and LR synthesis.

Pixel centers follow the half-pixel convention: output pixel i samples the
source coordinate (i + 0.5) * (n_in / n_out) - 0.5. Out-of-range taps are
clamped to the edge (replicate padding). No antialiasing is applied for
point-sampled methods, matching common blind-SR synthesis pipelines; "area"
is an exact box average and requires an integer downscale factor.
"""

from __future__ import annotations

import numpy as np

METHODS = ("nearest", "bilinear", "bicubic", "area")


def cubic_weight(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel with parameter a (bicubic, a = -0.5)."""
    t = np.abs(t)
    w = np.zeros_like(t)
    near = t <= 1
    far = (t > 1) & (t < 2)
    w[near] = (a + 2) * t[near] ** 3 - (a + 3) * t[near] ** 2 + 1
    w[far] = a * (t[far] ** 3 - 5 * t[far] ** 2 + 8 * t[far] - 4)
    return w


def _axis_weights(n_in: int, n_out: int, method: str) -> np.ndarray:
    """Dense (n_out, n_in) resampling matrix for one axis."""
    w = np.zeros((n_out, n_in), dtype=np.float64)
    ratio = n_in / n_out
    if method == "nearest":
        src = np.minimum((np.arange(n_out) + 0.5) * ratio, n_in - 1).astype(np.int64)
        w[np.arange(n_out), src] = 1.0
        return w
    src = (np.arange(n_out) + 0.5) * ratio - 0.5
    if method == "bilinear":
        lo = np.floor(src).astype(np.int64)
        frac = src - lo
        for k, wk in ((lo, 1 - frac), (lo + 1, frac)):
            np.add.at(w, (np.arange(n_out), np.clip(k, 0, n_in - 1)), wk)
        return w
    if method == "bicubic":
        base = np.floor(src).astype(np.int64)
        for off in (-1, 0, 1, 2):
            tap = base + off
            wk = cubic_weight(src - tap)
            np.add.at(w, (np.arange(n_out), np.clip(tap, 0, n_in - 1)), wk)
        # clamping can leave rows summing slightly off 1 at the borders
        return w / w.sum(axis=1, keepdims=True)
    if method == "area":
        if n_in % n_out != 0:
            raise ValueError(f"area resize needs an integer factor, got {n_in}->{n_out}")
        f = n_in // n_out
        for i in range(n_out):
            w[i, i * f : (i + 1) * f] = 1.0 / f
        return w
    raise ValueError(f"unknown interpolation method {method!r}; choose from {METHODS}")


def resize_image(img: np.ndarray, out_h: int, out_w: int, method: str) -> np.ndarray:
    """Resize an H x W x C (or H x W) image to (out_h, out_w)."""
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    h, w = img.shape[:2]
    wr = _axis_weights(h, out_h, method)
    wc = _axis_weights(w, out_w, method)
    tmp = np.tensordot(wr, img.astype(np.float64), axes=(1, 0))  # (out_h, w, c)
    out = np.tensordot(wc, tmp, axes=(1, 1)).transpose(1, 0, 2)  # (out_h, out_w, c)
    out = out.astype(img.dtype if img.dtype.kind == "f" else np.float64)
    return out[..., 0] if squeeze else out
