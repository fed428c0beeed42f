"""Image quality metrics: L1, PSNR, single-scale SSIM and its gradient.

The SSIM oracle is an independent straight-loop reimplementation (explicit
zero-padded windows, no separability tricks) so the production code's
separable correlate path is checked against something structurally
different.
"""

import numpy as np
import pytest

from splatlab import InvalidParameterError, l1, l1_gradient, psnr, ssim, \
    ssim_with_gradient
from splatlab.metrics import SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW


def reference_ssim(x, y):
    """Direct per-window SSIM with zero padding, mean over pixels and channels."""
    taps = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2.0
    w1 = np.exp(-taps ** 2 / (2.0 * SSIM_SIGMA ** 2))
    w1 /= w1.sum()
    w2 = np.outer(w1, w1)
    h, width, c = x.shape
    half = SSIM_WINDOW // 2
    xp = np.pad(x, ((half, half), (half, half), (0, 0)))
    yp = np.pad(y, ((half, half), (half, half), (0, 0)))
    total = 0.0
    for i in range(h):
        for j in range(width):
            for k in range(c):
                wx = xp[i:i + SSIM_WINDOW, j:j + SSIM_WINDOW, k]
                wy = yp[i:i + SSIM_WINDOW, j:j + SSIM_WINDOW, k]
                mx = (w2 * wx).sum()
                my = (w2 * wy).sum()
                vx = (w2 * wx * wx).sum() - mx * mx
                vy = (w2 * wy * wy).sum() - my * my
                cxy = (w2 * wx * wy).sum() - mx * my
                total += ((2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)
                          / ((mx * mx + my * my + SSIM_C1)
                             * (vx + vy + SSIM_C2)))
    return total / (h * width * c)


def random_pair(seed, shape=(8, 8, 3)):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, shape), rng.uniform(0, 1, shape)


class TestL1:
    def test_constant_offset(self):
        a = np.full((4, 4, 3), 0.6)
        b = np.full((4, 4, 3), 0.5)
        assert l1(a, b) == pytest.approx(0.1, abs=1e-15)

    def test_gradient_is_scaled_sign(self):
        """d mean|a-b| / da = sign(a-b) / N with N all elements."""
        a, b = random_pair(0, (3, 3, 3))
        g = l1_gradient(a, b)
        np.testing.assert_allclose(g, np.sign(a - b) / a.size, atol=1e-15)

    def test_gradient_matches_finite_differences(self):
        a, b = random_pair(1, (4, 4, 3))
        g = l1_gradient(a, b)
        h = 1e-7
        for idx in [(0, 0, 0), (2, 3, 1), (3, 1, 2)]:
            ap = a.copy(); ap[idx] += h
            am = a.copy(); am[idx] -= h
            fd = (l1(ap, b) - l1(am, b)) / (2 * h)
            assert g[idx] == pytest.approx(fd, rel=1e-5)


class TestPsnr:
    def test_known_mse(self):
        """Constant error 0.1 -> MSE 0.01 -> exactly 20 dB."""
        a = np.full((5, 5, 3), 0.3)
        b = np.full((5, 5, 3), 0.4)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)

    def test_identical_images_hit_cap(self):
        a = np.full((5, 5, 3), 0.3)
        assert psnr(a, a) == 100.0

    def test_tiny_error_hits_cap(self):
        a = np.zeros((5, 5, 3))
        b = np.full((5, 5, 3), 1e-7)  # MSE 1e-14 < 1e-10 threshold
        assert psnr(a, b) == 100.0

    def test_shape_mismatch_raises(self):
        with pytest.raises(InvalidParameterError):
            psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestSsim:
    def test_identical_is_exactly_one(self):
        img = np.random.default_rng(2).uniform(0, 1, (12, 10, 3))
        assert ssim(img, img) == 1.0

    def test_symmetric(self):
        a, b = random_pair(3)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-14)

    def test_matches_direct_reference(self):
        for seed in range(3):
            a, b = random_pair(seed, (8, 7, 3))
            assert ssim(a, b) == pytest.approx(reference_ssim(a, b), abs=1e-12)

    def test_different_images_below_one(self):
        a, b = random_pair(4)
        assert ssim(a, b) < 0.99

    def test_gradient_value_matches_plain_ssim(self):
        a, b = random_pair(5)
        value, _ = ssim_with_gradient(a, b)
        assert value == ssim(a, b)

    def test_gradient_matches_finite_differences(self):
        a, b = random_pair(6, (8, 8, 3))
        _, grad = ssim_with_gradient(a, b)
        h = 1e-6
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(12):
            idx = tuple(rng.integers(0, s) for s in a.shape)
            ap = a.copy(); ap[idx] += h
            am = a.copy(); am[idx] -= h
            fd = (ssim(ap, b) - ssim(am, b)) / (2 * h)
            worst = max(worst, abs(grad[idx] - fd) / max(abs(fd), 1e-12))
        assert worst < 1e-4

    def test_gradient_shape(self):
        a, b = random_pair(8)
        _, grad = ssim_with_gradient(a, b)
        assert grad.shape == a.shape
