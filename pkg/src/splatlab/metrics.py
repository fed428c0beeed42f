"""Image-quality metrics (L1, PSNR, SSIM) and their analytic gradients.

SSIM follows the standard single-scale recipe: an 11-tap Gaussian window
(sigma 1.5) applied with zero padding, stability constants C1 = 0.01^2 and
C2 = 0.03^2 on a [0, 1] dynamic range, averaged over pixels and channels.
The windowing operator is symmetric, so it is its own adjoint and the
gradient comes out as three more windowed passes — no autograd involved.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

from .core import FLOAT, InvalidParameterError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PSNR_CAP = 100.0


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=FLOAT) - (size - 1) / 2.0
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()

_WINDOW = _gaussian_window()


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=FLOAT)
    b = np.asarray(b, dtype=FLOAT)
    if a.shape != b.shape:
        raise InvalidParameterError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[2] != 3:
        raise InvalidParameterError(f"expected (H, W, 3) images, got {a.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidParameterError("non-finite image values")
    return a, b


def _windowed(img: np.ndarray) -> np.ndarray:
    """Apply the separable Gaussian window with zero padding, per channel."""
    out = correlate1d(img, _WINDOW, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, _WINDOW, axis=1, mode="constant", cval=0.0)


def l1(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute difference."""
    a, b = _check_pair(a, b)
    return float(np.mean(np.abs(a - b)))


def l1_gradient(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """d(l1)/da; zero where a == b (the subgradient convention sign(0) = 0)."""
    a, b = _check_pair(a, b)
    return np.sign(a - b) / a.size


def psnr(a: np.ndarray, b: np.ndarray, cap: float = PSNR_CAP) -> float:
    """Peak signal-to-noise ratio in dB on a [0, 1] range, capped for identical pairs."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse <= 10.0 ** (-cap / 10.0):
        return cap
    return -10.0 * float(np.log10(mse))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over pixels and channels."""
    return _ssim_impl(*_check_pair(a, b), want_grad=False)[0]


def ssim_with_gradient(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """(ssim, d ssim / d a); the gradient is exact for the zero-padded window."""
    return _ssim_impl(*_check_pair(a, b), want_grad=True)


def _ssim_impl(x: np.ndarray, y: np.ndarray, want_grad: bool
               ) -> tuple[float, np.ndarray]:
    mu_x = _windowed(x)
    mu_y = _windowed(y)
    m11 = _windowed(x * x)
    m22 = _windowed(y * y)
    m12 = _windowed(x * y)

    var_x = m11 - mu_x * mu_x
    var_y = m22 - mu_y * mu_y
    cov = m12 - mu_x * mu_y

    a1 = 2 * mu_x * mu_y + SSIM_C1
    a2 = 2 * cov + SSIM_C2
    b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    b2 = var_x + var_y + SSIM_C2
    smap = (a1 * a2) / (b1 * b2)
    value = float(np.mean(smap))
    if not want_grad:
        return value, np.zeros(0)

    # Pixelwise partials of S w.r.t. the windowed moments of x, then pull
    # back through the (self-adjoint) window operator.
    weight = 1.0 / smap.size
    q_mu = (2 * mu_y * a2 / (b1 * b2)      # through A1
            - 2 * mu_x * smap / b1         # through B1
            + 2 * mu_x * smap / b2         # through B2 via var_x = m11 - mu_x^2
            - 2 * mu_y * a1 / (b1 * b2))   # through A2 via cov = m12 - mu_x mu_y
    q_m11 = -smap / b2
    q_m12 = 2 * a1 / (b1 * b2)

    grad = (_windowed(q_mu)
            + 2 * x * _windowed(q_m11)
            + y * _windowed(q_m12)) * weight
    return value, grad
