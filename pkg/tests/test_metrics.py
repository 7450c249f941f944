import numpy as np
import pytest

from noisydeblur.errors import ValidationError
from noisydeblur.imaging import delta_psf, luminance, normalize_psf
from noisydeblur.metrics import (
    SSIM_K1,
    SSIM_K2,
    SSIM_SIGMA,
    SSIM_WINDOW,
    kernel_similarity,
    psnr,
    ssim,
)


def naive_ssim(a, b):
    """Per-window SSIM oracle: explicit loops, no vectorized filtering."""
    x = luminance(a)
    y = luminance(b)
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    coords = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-0.5 * (coords / SSIM_SIGMA) ** 2)
    win = np.outer(g, g)
    win /= win.sum()
    h, w = x.shape
    vals = []
    for i in range(h - SSIM_WINDOW + 1):
        for j in range(w - SSIM_WINDOW + 1):
            px = x[i : i + SSIM_WINDOW, j : j + SSIM_WINDOW]
            py = y[i : i + SSIM_WINDOW, j : j + SSIM_WINDOW]
            mx = np.sum(win * px)
            my = np.sum(win * py)
            vx = np.sum(win * px * px) - mx * mx
            vy = np.sum(win * py * py) - my * my
            cxy = np.sum(win * px * py) - mx * my
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


class TestPsnr:
    def test_identical_hits_sentinel(self, rng):
        img = rng.random((8, 8))
        assert psnr(img, img) == 99.0

    def test_uniform_offset_01_is_20db(self):
        a = np.full((16, 16), 0.3)
        assert np.isclose(psnr(a, a + 0.1), 20.0)

    def test_uniform_offset_05(self):
        a = np.full((16, 16), 0.2)
        assert np.isclose(psnr(a, a + 0.5), 6.0206, atol=1e-4)

    def test_symmetry(self, rng):
        a = rng.random((8, 8))
        b = rng.random((8, 8))
        assert psnr(a, b) == psnr(b, a)

    def test_pools_channels(self, rng):
        a = rng.random((8, 8, 3))
        b = a.copy()
        b[..., 0] += 0.2
        expected = 10 * np.log10(1 / np.mean((a - b) ** 2))
        assert np.isclose(psnr(a, b), expected)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            psnr(np.zeros((4, 4)), np.zeros((5, 4)))


class TestSsim:
    def test_self_is_one(self, rng):
        img = rng.random((16, 16))
        assert np.isclose(ssim(img, img), 1.0)

    def test_constant_patches_closed_form(self):
        # Zero variance kills the structure term; only luminance survives.
        c, d = 0.4, 0.2
        a = np.full((16, 16), c)
        b = np.full((16, 16), c + d)
        c1 = SSIM_K1**2
        expected = (2 * c * (c + d) + c1) / (c * c + (c + d) ** 2 + c1)
        assert np.isclose(ssim(a, b), expected)

    def test_negative_contrast_matches_window_oracle(self, rng):
        img = rng.random((20, 20))
        flipped = 2.0 * img.mean() - img
        assert np.isclose(ssim(img, flipped), naive_ssim(img, flipped), atol=1e-10)

    def test_random_pair_matches_window_oracle(self, rng):
        a = rng.random((14, 17))
        b = rng.random((14, 17))
        assert np.isclose(ssim(a, b), naive_ssim(a, b), atol=1e-10)

    def test_color_uses_luminance(self, rng):
        a = rng.random((16, 16, 3))
        b = rng.random((16, 16, 3))
        assert np.isclose(ssim(a, b), ssim(luminance(a), luminance(b)))

    def test_symmetry(self, rng):
        a = rng.random((16, 16))
        b = rng.random((16, 16))
        assert np.isclose(ssim(a, b), ssim(b, a))

    def test_too_small_rejected(self):
        with pytest.raises(ValidationError):
            ssim(np.zeros((10, 16)), np.zeros((10, 16)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            ssim(np.zeros((16, 16)), np.zeros((16, 17)))


class TestKernelSimilarity:
    def test_self_is_one(self, rng):
        k = normalize_psf(rng.random((5, 5)))
        assert np.isclose(kernel_similarity(k, k), 1.0)

    def test_translate_inside_canvas_is_one(self, rng):
        k = np.zeros((7, 7))
        k[2:5, 2:5] = normalize_psf(rng.random((3, 3)))
        shifted = np.roll(k, (1, 1), axis=(0, 1))
        assert np.isclose(kernel_similarity(k, shifted), 1.0)

    def test_uniform_vs_delta_is_one_third(self):
        # Best overlap 1/9, norms 1/3 and 1.
        assert np.isclose(kernel_similarity(np.full((3, 3), 1 / 9), delta_psf(3)), 1 / 3)

    def test_symmetry(self, rng):
        p = normalize_psf(rng.random((5, 5)))
        q = normalize_psf(rng.random((7, 7)))
        assert np.isclose(kernel_similarity(p, q), kernel_similarity(q, p))

    def test_positive_scale_invariance(self, rng):
        p = rng.random((5, 5))
        q = rng.random((5, 5))
        base = kernel_similarity(p, q)
        assert np.isclose(kernel_similarity(3.7 * p, q), base)
        assert np.isclose(kernel_similarity(p, 0.01 * q), base)

    def test_mixed_sides(self, rng):
        small = normalize_psf(rng.random((3, 3)))
        big = np.zeros((9, 9))
        big[3:6, 3:6] = small
        assert np.isclose(kernel_similarity(small, big), 1.0)

    def test_all_zero_rejected(self):
        with pytest.raises(ValidationError):
            kernel_similarity(np.zeros((3, 3)), delta_psf(3))

    def test_bounded_by_one(self, rng):
        for _ in range(20):
            p = rng.random((5, 5))
            q = rng.random((7, 7))
            s = kernel_similarity(p, q)
            assert 0.0 < s <= 1.0 + 1e-12
