"""EDM-style denoising diffusion core: preconditioning, loss, schedule, sampler.

The denoiser is parameterized around a continuous noise scale sigma. A raw
network F is wrapped into an effective denoiser

    D(x; sigma) = c_skip * x + c_out * F(c_in * x; c_noise, cond)

so that the network sees unit-variance inputs and predicts a bounded residual
at every noise level. All functions here are pure given (inputs, rng) and
operate on either numpy arrays or torch tensors; the scalar coefficient math
is always done in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np


class NumericError(RuntimeError):
    """Raised when a numeric contract is violated (non-finite values)."""


@dataclass(frozen=True)
class SigmaParams:
    """Noise-scale configuration for training and sampling.

    Defaults assume data scaled to [-1, 1] (sigma_data = 0.5), a lognormal
    training distribution ln(sigma) ~ N(p_mean, p_std^2), and a sampling
    range [sigma_min, sigma_max] warped by exponent rho.
    """

    sigma_data: float = 0.5
    p_mean: float = -1.2
    p_std: float = 1.2
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0

    def __post_init__(self):
        for name in ("sigma_data", "sigma_min", "sigma_max", "rho"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SigmaParams.{name} must be > 0, got {getattr(self, name)}")
        if self.p_std < 0:
            raise ValueError(f"SigmaParams.p_std must be >= 0, got {self.p_std}")
        if not self.sigma_min < self.sigma_max:
            raise ValueError(
                f"sigma_min ({self.sigma_min}) must be < sigma_max ({self.sigma_max})"
            )


class PrecondCoeffs(NamedTuple):
    """Preconditioning coefficients at one (or a batch of) noise level(s)."""

    c_skip: np.ndarray
    c_out: np.ndarray
    c_in: np.ndarray
    c_noise: np.ndarray


def _check_sigma(sigma) -> np.ndarray:
    sig = np.asarray(sigma, dtype=np.float64)
    if not np.all(np.isfinite(sig)) or np.any(sig <= 0):
        raise ValueError(f"sigma must be finite and > 0, got {sigma}")
    return sig


def precond_coeffs(sigma, params: SigmaParams) -> PrecondCoeffs:
    """Evaluate (c_skip, c_out, c_in, c_noise) at noise level sigma.

    sigma may be a positive scalar or an array of positive values; the
    returned coefficients have the same shape.
    """
    sig = _check_sigma(sigma)
    sd2 = params.sigma_data**2
    total = sig**2 + sd2
    c_skip = sd2 / total
    c_out = sig * params.sigma_data / np.sqrt(total)
    c_in = 1.0 / np.sqrt(total)
    c_noise = np.log(sig) / 4.0
    return PrecondCoeffs(c_skip, c_out, c_in, c_noise)


def loss_weight(sigma, params: SigmaParams):
    """Loss weight lambda(sigma) = (sigma^2 + sigma_data^2) / (sigma * sigma_data)^2.

    Equals 1 / c_out(sigma)^2, so the weighted residual of the wrapped
    denoiser has unit effective scale at every noise level.
    """
    sig = _check_sigma(sigma)
    return (sig**2 + params.sigma_data**2) / (sig * params.sigma_data) ** 2


def sample_training_sigma(rng: np.random.Generator, params: SigmaParams, size=None):
    """Draw training noise level(s) with ln(sigma) ~ N(p_mean, p_std^2)."""
    return np.exp(rng.normal(params.p_mean, params.p_std, size=size))


def karras_schedule(n_steps: int, params: SigmaParams) -> np.ndarray:
    """Strictly decreasing sigma schedule from sigma_max to sigma_min.

    sigma_i = (sigma_max^(1/rho) + i/(n-1) * (sigma_min^(1/rho) - sigma_max^(1/rho)))^rho
    """
    if n_steps < 2:
        raise ValueError(f"n_steps must be >= 2, got {n_steps}")
    i = np.arange(n_steps, dtype=np.float64)
    inv_rho = 1.0 / params.rho
    hi = params.sigma_max**inv_rho
    lo = params.sigma_min**inv_rho
    return (hi + i / (n_steps - 1) * (lo - hi)) ** params.rho


def _is_torch(x) -> bool:
    return type(x).__module__.split(".")[0] == "torch"


def _coeff_like(x, value):
    """Cast a float64 scalar/array coefficient to x's library and dtype.

    A 1-d per-sample coefficient is reshaped to broadcast over the trailing
    dimensions of a batched x.
    """
    value = np.asarray(value, dtype=np.float64)
    if value.ndim == 1 and getattr(x, "ndim", 0) > 1 and value.shape[0] == x.shape[0]:
        value = value.reshape(value.shape[0], *([1] * (x.ndim - 1)))
    if _is_torch(x):
        import torch

        return torch.as_tensor(value, dtype=x.dtype, device=x.device)
    return value.astype(x.dtype) if isinstance(x, np.ndarray) else float(value)


def denoise(network: Callable, x, sigma, cond, params: SigmaParams):
    """Apply the preconditioned denoiser D(x; sigma, cond).

    network(x_scaled, sigma, cond) is the raw model F; it receives the
    c_in-scaled input and derives its noise conditioning (c_noise) from
    sigma. cond is passed through opaquely, except that a spatial shape
    mismatch against x is rejected when cond exposes a ``lr_up`` image.
    """
    c = precond_coeffs(sigma, params)
    lr_up = getattr(cond, "lr_up", None)
    if lr_up is not None and tuple(lr_up.shape[-3:-1]) != tuple(_spatial_hw(x)):
        raise ValueError(
            f"condition spatial size {tuple(lr_up.shape[-3:-1])} does not match "
            f"input spatial size {tuple(_spatial_hw(x))}"
        )
    c_skip = _coeff_like(x, c.c_skip)
    c_out = _coeff_like(x, c.c_out)
    c_in = _coeff_like(x, c.c_in)
    return c_skip * x + c_out * network(c_in * x, sigma, cond)


def _spatial_hw(x):
    # images are (..., H, W, C) numpy or (..., C, H, W) torch
    if _is_torch(x):
        return x.shape[-2], x.shape[-1]
    return x.shape[-3], x.shape[-2]


def training_loss(network: Callable, y, n, sigma, cond, params: SigmaParams):
    """Weighted denoising score-matching loss for one example or one batch.

    Returns lambda(sigma) * mean((D(y + n; sigma, cond) - y)^2), with the
    mean taken over elements (and additionally over the batch when sigma is
    per-sample). Mean rather than sum keeps the weight independent of the
    image size.
    """
    _require_finite(y, "y")
    _require_finite(n, "n")
    d = denoise(network, y + n, sigma, cond, params)
    sq = (d - y) ** 2
    sig = np.asarray(sigma, dtype=np.float64)
    if sig.ndim == 1 and getattr(y, "ndim", 0) > 1 and sig.shape[0] == y.shape[0]:
        per_example = sq.reshape(sq.shape[0], -1).mean(-1)
        w = _coeff_like(per_example, loss_weight(sig, params))
        return (w * per_example).mean()
    return float(loss_weight(sig, params)) * sq.mean()


def _require_finite(x, name: str):
    finite = x.isfinite().all() if _is_torch(x) else np.all(np.isfinite(x))
    if not bool(finite):
        raise NumericError(f"non-finite values in {name}")


def heun_sample(
    denoiser: Callable,
    cond,
    n_steps: int,
    params: SigmaParams,
    rng: np.random.Generator,
    shape=None,
):
    """Integrate the probability-flow ODE with Heun's method (deterministic).

    denoiser(x, sigma, cond) must satisfy the denoise contract. x starts at
    sigma_max * N(0, 1) (seeded through rng) and is carried in float64. The
    schedule ends with an exact Euler step to sigma = 0, so the returned
    sample is the denoiser output at sigma_min.

    shape defaults to the spatial/channel shape of cond.lr_up.
    """
    if shape is None:
        if cond is None or getattr(cond, "lr_up", None) is None:
            raise ValueError("shape is required when cond does not provide lr_up")
        shape = cond.lr_up.shape
    sigmas = np.concatenate([karras_schedule(n_steps, params), [0.0]])
    x = params.sigma_max * rng.standard_normal(shape)
    for i in range(n_steps):
        s_cur, s_next = sigmas[i], sigmas[i + 1]
        den = np.asarray(denoiser(x, s_cur, cond), dtype=np.float64)
        _require_finite(den, f"denoiser output at sigma={s_cur:g}")
        d_cur = (x - den) / s_cur
        x_next = x + (s_next - s_cur) * d_cur
        if s_next > 0:
            den2 = np.asarray(denoiser(x_next, s_next, cond), dtype=np.float64)
            _require_finite(den2, f"denoiser output at sigma={s_next:g}")
            d_prime = (x_next - den2) / s_next
            x_next = x + (s_next - s_cur) * 0.5 * (d_cur + d_prime)
        x = x_next
    return x
