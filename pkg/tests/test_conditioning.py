"""Mask encoding, bicubic upsampling, and input-assembly layout tests."""

import numpy as np
import pytest

from changesr import conditioning as cond
from changesr.interpolation import resize_image


def test_encode_single_pixel():
    planes = cond.encode_mask(np.array([[3]]), num_classes=7)
    assert planes.shape == (1, 1, 8)
    expected = np.zeros(8)
    expected[3] = 1
    np.testing.assert_array_equal(planes[0, 0], expected)


def test_encode_all_zero_mask():
    planes = cond.encode_mask(np.zeros((5, 5), dtype=int), num_classes=3)
    np.testing.assert_array_equal(planes[..., 0], np.ones((5, 5)))
    np.testing.assert_array_equal(planes[..., 1:], np.zeros((5, 5, 3)))


def test_encode_2x2_enumerated():
    mask = np.array([[0, 1], [2, 0]])
    planes = cond.encode_mask(mask, num_classes=2)
    for y in range(2):
        for x in range(2):
            expected = np.zeros(3)
            expected[mask[y, x]] = 1
            np.testing.assert_array_equal(planes[y, x], expected)


def test_encode_rejects_out_of_range_naming_pixel():
    mask = np.array([[0, 5], [1, 0]])
    with pytest.raises(ValueError, match=r"value 5 at pixel \(0, 1\)"):
        cond.encode_mask(mask, num_classes=3)


def test_encode_argmax_roundtrip_and_plane_sums():
    rng = np.random.default_rng(0)
    for _ in range(20):
        k = int(rng.integers(1, 8))
        mask = rng.integers(0, k + 1, size=(13, 9))
        planes = cond.encode_mask(mask, k)
        np.testing.assert_array_equal(planes.argmax(axis=-1), mask)
        np.testing.assert_array_equal(planes.sum(axis=-1), np.ones(mask.shape))


def test_upsample_scale_one_identity():
    img = np.random.default_rng(1).normal(size=(6, 6, 3)).astype(np.float32)
    out = cond.upsample_lr(img, 1)
    np.testing.assert_array_equal(out, img)


@pytest.mark.parametrize("scale", [2, 4, 8])
def test_upsample_constant_stays_constant(scale):
    img = np.full((4, 4, 3), 0.37, dtype=np.float32)
    out = cond.upsample_lr(img, scale)
    assert out.shape == (4 * scale, 4 * scale, 3)
    np.testing.assert_allclose(out, 0.37, atol=1e-6)


def _bicubic_oracle(img, scale):
    """Brute-force per-pixel evaluation of the Keys kernel (a = -0.5)."""

    def kernel(t, a=-0.5):
        t = abs(t)
        if t <= 1:
            return (a + 2) * t**3 - (a + 3) * t**2 + 1
        if t < 2:
            return a * (t**3 - 5 * t**2 + 8 * t - 4)
        return 0.0

    h, w, c = img.shape
    out = np.zeros((h * scale, w * scale, c))
    for oy in range(h * scale):
        for ox in range(w * scale):
            sy = (oy + 0.5) / scale - 0.5
            sx = (ox + 0.5) / scale - 0.5
            acc = np.zeros(c)
            wsum = 0.0
            for dy in range(-1, 3):
                for dx in range(-1, 3):
                    ty = int(np.floor(sy)) + dy
                    tx = int(np.floor(sx)) + dx
                    wt = kernel(sy - ty) * kernel(sx - tx)
                    yy = min(max(ty, 0), h - 1)
                    xx = min(max(tx, 0), w - 1)
                    acc += wt * img[yy, xx]
                    wsum += wt
            out[oy, ox] = acc / wsum
    return out


def test_upsample_matches_kernel_oracle_on_ramp():
    img = np.array([[[0.0], [1.0]], [[2.0], [3.0]]], dtype=np.float64)
    img = np.repeat(img, 3, axis=-1)
    got = cond.upsample_lr(img.astype(np.float32), 2)
    want = _bicubic_oracle(img, 2)
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_upsample_matches_kernel_oracle_random():
    rng = np.random.default_rng(2)
    img = rng.uniform(-1, 1, size=(5, 7, 3))
    got = resize_image(img, 20, 28, "bicubic")
    want = _bicubic_oracle(img, 4)
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_upsample_rejects_bad_scale():
    with pytest.raises(ValueError):
        cond.upsample_lr(np.zeros((4, 4, 3)), 3)


def _make_cond(h=6, w=6, k=7):
    rng = np.random.default_rng(3)
    lr_up = rng.uniform(-1, 1, size=(h, w, 3)).astype(np.float32)
    ref = rng.uniform(-1, 1, size=(h, w, 3)).astype(np.float32)
    mask = rng.integers(0, k + 1, size=(h, w))
    return cond.ConditionSet(lr_up=lr_up, ref=ref, mask_onehot=cond.encode_mask(mask, k))


def test_assemble_channel_count_and_layout():
    cs = _make_cond(k=7)
    noisy = np.random.default_rng(4).normal(size=(6, 6, 3)).astype(np.float32)
    stacked = cond.assemble_input(noisy, cs)
    assert stacked.shape[-1] == 17 == cond.input_channels(7)
    # golden channel order: noisy | lr_up | ref | mask planes
    np.testing.assert_array_equal(stacked[..., 0:3], noisy)
    np.testing.assert_array_equal(stacked[..., 3:6], cs.lr_up)
    np.testing.assert_array_equal(stacked[..., 6:9], cs.ref)
    np.testing.assert_array_equal(stacked[..., 9:], cs.mask_onehot)


def test_assemble_split_bijection():
    cs = _make_cond(k=4)
    noisy = np.random.default_rng(5).normal(size=(6, 6, 3)).astype(np.float32)
    for use_ref in (True, False):
        for use_mask in (True, False):
            stacked = cond.assemble_input(noisy, cs, use_ref=use_ref, use_mask=use_mask)
            got_noisy, got_lr, got_ref, got_mask = cond.split_input(stacked, 4, use_ref, use_mask)
            np.testing.assert_array_equal(got_noisy, noisy)
            np.testing.assert_array_equal(got_lr, cs.lr_up)
            if use_ref:
                np.testing.assert_array_equal(got_ref, cs.ref)
            else:
                assert got_ref is None
            if use_mask:
                np.testing.assert_array_equal(got_mask, cs.mask_onehot)
            else:
                assert got_mask is None


def test_assemble_rejects_spatial_mismatch():
    cs = _make_cond()
    with pytest.raises(ValueError):
        cond.assemble_input(np.zeros((5, 6, 3), dtype=np.float32), cs)


def test_condition_set_validates_congruence_and_planes():
    with pytest.raises(ValueError):
        cond.ConditionSet(
            lr_up=np.zeros((4, 4, 3)), ref=np.zeros((5, 4, 3)), mask_onehot=np.zeros((4, 4, 2))
        )
    bad_planes = np.zeros((4, 4, 2), dtype=np.float32)  # sums to 0, not 1
    with pytest.raises(ValueError):
        cond.ConditionSet(lr_up=np.zeros((4, 4, 3)), ref=np.zeros((4, 4, 3)), mask_onehot=bad_planes)


def test_build_condition_set_upsamples_to_hr():
    lr = np.zeros((4, 4, 3), dtype=np.float32)
    cs = cond.build_condition_set(lr, np.zeros((16, 16, 3), np.float32), np.zeros((16, 16), int), 4, 2)
    assert cs.lr_up.shape == (16, 16, 3)
    assert cs.num_classes == 2
