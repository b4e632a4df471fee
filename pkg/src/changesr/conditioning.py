"""Condition assembly: mask one-hot encoding, LR upsampling, channel stacking.

The denoiser consumes a single channel-stacked tensor whose layout is fixed:

    [noisy (3) | lr_up (3) | ref (3) | mask_onehot (K+1)]

with ref and mask optionally dropped by the ablation switches. Plane 0 of the
one-hot mask is the no-change class, so an all-unchanged mask activates plane
0 everywhere. Images are float rasters in [-1, 1], channels last; mask planes
stay binary (0/1) and are not rescaled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .interpolation import resize_image

UPSAMPLE_SCALES = (1, 2, 4, 8, 16)


def encode_mask(mask: np.ndarray, num_classes: int) -> np.ndarray:
    """One-hot encode an H x W change mask into H x W x (K+1) binary planes.

    Plane c is 1 exactly where mask == c; class 0 means unchanged.
    """
    mask = np.asarray(mask)
    bad = (mask < 0) | (mask > num_classes)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise ValueError(
            f"mask value {int(mask[y, x])} at pixel ({int(y)}, {int(x)}) is outside "
            f"the legal class range 0..{num_classes}"
        )
    return (mask[..., None] == np.arange(num_classes + 1)).astype(np.float32)


def upsample_lr(lr: np.ndarray, scale: int) -> np.ndarray:
    """Bicubically upsample an LR image by an integer scale factor."""
    if scale not in UPSAMPLE_SCALES:
        raise ValueError(f"unsupported scale {scale}; expected one of {UPSAMPLE_SCALES}")
    if scale == 1:
        return np.array(lr, dtype=np.float32)
    h, w = lr.shape[:2]
    return resize_image(np.asarray(lr, dtype=np.float32), h * scale, w * scale, "bicubic")


@dataclass
class ConditionSet:
    """Spatially congruent conditioning inputs at target (HR) resolution."""

    lr_up: np.ndarray
    ref: np.ndarray
    mask_onehot: np.ndarray

    def __post_init__(self):
        hw = self.lr_up.shape[:2]
        if self.ref.shape[:2] != hw or self.mask_onehot.shape[:2] != hw:
            raise ValueError(
                f"condition components must be spatially congruent: lr_up {hw}, "
                f"ref {self.ref.shape[:2]}, mask {self.mask_onehot.shape[:2]}"
            )
        sums = self.mask_onehot.sum(axis=-1)
        if not np.all(sums == 1):
            raise ValueError("mask one-hot planes must sum to exactly 1 at every pixel")

    @property
    def num_classes(self) -> int:
        return self.mask_onehot.shape[-1] - 1


def build_condition_set(lr, ref, mask, scale: int, num_classes: int) -> ConditionSet:
    """Upsample LR, encode the mask, and bundle everything at HR resolution."""
    return ConditionSet(
        lr_up=upsample_lr(lr, scale),
        ref=np.asarray(ref, dtype=np.float32),
        mask_onehot=encode_mask(mask, num_classes),
    )


def condition_channels(
    cond: ConditionSet, use_ref: bool = True, use_mask: bool = True
) -> np.ndarray:
    """Stack the conditioning channels in fixed order [lr_up | ref | mask]."""
    parts = [cond.lr_up]
    if use_ref:
        parts.append(cond.ref)
    if use_mask:
        parts.append(cond.mask_onehot)
    return np.concatenate([np.asarray(p, dtype=np.float32) for p in parts], axis=-1)


def assemble_input(
    noisy: np.ndarray, cond: ConditionSet, use_ref: bool = True, use_mask: bool = True
) -> np.ndarray:
    """Concatenate [noisy | lr_up | ref | mask_onehot] along the channel axis."""
    if noisy.shape[:2] != cond.lr_up.shape[:2]:
        raise ValueError(
            f"noisy image {noisy.shape[:2]} is not spatially congruent with "
            f"conditions {cond.lr_up.shape[:2]}"
        )
    return np.concatenate(
        [np.asarray(noisy, dtype=np.float32), condition_channels(cond, use_ref, use_mask)],
        axis=-1,
    )


def input_channels(num_classes: int, use_ref: bool = True, use_mask: bool = True) -> int:
    """Channel count of the assembled denoiser input for a given layout."""
    return 3 + 3 + (3 if use_ref else 0) + (num_classes + 1 if use_mask else 0)


def split_input(stacked: np.ndarray, num_classes: int, use_ref=True, use_mask=True):
    """Inverse of assemble_input; returns (noisy, lr_up, ref, mask_onehot).

    Disabled components come back as None.
    """
    expected = input_channels(num_classes, use_ref, use_mask)
    if stacked.shape[-1] != expected:
        raise ValueError(f"expected {expected} channels, got {stacked.shape[-1]}")
    noisy, lr_up = stacked[..., 0:3], stacked[..., 3:6]
    at = 6
    ref = None
    if use_ref:
        ref = stacked[..., at : at + 3]
        at += 3
    mask = stacked[..., at : at + num_classes + 1] if use_mask else None
    return noisy, lr_up, ref, mask
