"""Reconstruction quality metrics on magnitude images.

Both metrics take plain 2-D arrays (or tensors, unwrapped) and a
`data_range`, the dynamic range of the ground truth. They are evaluation
code: pure numpy in float64, no autodiff involvement.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError
from .tensor import Tensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_image(x, op: str) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if arr.ndim != 2:
        raise ShapeError(f"{op} expects a 2-D magnitude image, got shape {arr.shape}")
    return arr.astype(np.float64)


def psnr(xhat, x, data_range: float) -> float:
    """Peak signal-to-noise ratio in dB: 10*log10(range^2 / MSE).

    Returns +inf when the images are identical (MSE exactly zero).
    """
    a = _as_image(xhat, "psnr")
    b = _as_image(x, "psnr")
    if a.shape != b.shape:
        raise ShapeError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    if data_range <= 0:
        raise ConfigError(f"data_range must be positive, got {data_range}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(data_range * data_range / mse)


def _gaussian_window() -> np.ndarray:
    half = (SSIM_WINDOW - 1) / 2.0
    coords = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(coords ** 2) / (2.0 * SSIM_SIGMA ** 2))
    w = np.outer(g, g)
    return w / w.sum()


_WINDOW = _gaussian_window()


def _local_means(img: np.ndarray) -> np.ndarray:
    # Weighted mean over every valid 11x11 window.
    views = sliding_window_view(img, (SSIM_WINDOW, SSIM_WINDOW))
    return np.tensordot(views, _WINDOW, axes=([2, 3], [0, 1]))


def ssim(xhat, x, data_range: float) -> float:
    """Mean structural similarity over valid windows (Gaussian weighting).

    Identical inputs give exactly 1.0: every statistic of the two images is
    computed through the same expressions, so numerator and denominator of
    each window ratio are bitwise equal.
    """
    a = _as_image(xhat, "ssim")
    b = _as_image(x, "ssim")
    if a.shape != b.shape:
        raise ShapeError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ShapeError(f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, "
                         f"got {a.shape}")
    if data_range <= 0:
        raise ConfigError(f"data_range must be positive, got {data_range}")

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    mu_a = _local_means(a)
    mu_b = _local_means(b)
    var_a = _local_means(a * a) - mu_a * mu_a
    var_b = _local_means(b * b) - mu_b * mu_b
    cov = _local_means(a * b) - mu_a * mu_b

    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
