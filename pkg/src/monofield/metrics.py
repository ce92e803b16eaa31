"""Image quality metrics: PSNR and windowed SSIM.

Both operate on float images in [0, 1].  SSIM follows the standard
recipe: 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2,
computed on luma for color inputs and averaged over valid window
positions.
"""

from __future__ import annotations

import numpy as np

PSNR_CAP_DB = 99.0

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse <= 0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def to_luma(img: np.ndarray) -> np.ndarray:
    """Fixed-weight grayscale conversion for [H, W, 3] images."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ np.asarray(LUMA_WEIGHTS)
    raise ValueError(f"expected [H, W] or [H, W, 3], got {img.shape}")


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over valid 11x11 window positions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    x = to_luma(a)
    y = to_luma(b)
    k = SSIM_WINDOW
    if x.shape[0] < k or x.shape[1] < k:
        raise ValueError(
            f"ssim: image {x.shape} smaller than the {k}x{k} window"
        )
    w = _gaussian_window(k, SSIM_SIGMA)

    def windowed_mean(img):
        views = np.lib.stride_tricks.sliding_window_view(img, (k, k))
        return np.einsum("ijkl,kl->ij", views, w)

    mu_x = windowed_mean(x)
    mu_y = windowed_mean(y)
    xx = windowed_mean(x * x) - mu_x ** 2
    yy = windowed_mean(y * y) - mu_y ** 2
    xy = windowed_mean(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * xy + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (xx + yy + SSIM_C2)
    return float(np.mean(num / den))
