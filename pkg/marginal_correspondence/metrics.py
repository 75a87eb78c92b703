"""Image quality and correspondence metrics on [0, 1]-scaled images."""

import numpy as np
from scipy.signal import convolve2d

from .errors import ConfigError, DimensionError
from .feature_core import Tensor

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"images differ in shape: {a.shape} vs {b.shape}")


def l1(a: Tensor, b: Tensor) -> float:
    """Mean absolute difference."""
    _check_pair(a, b)
    return float(np.mean(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


def psnr(a: Tensor, b: Tensor, max_value: float = 1.0) -> float:
    """10 log10(max^2 / MSE) in dB, or ``PSNR_CAP_DB`` when MSE is zero."""
    _check_pair(a, b)
    if max_value <= 0:
        raise ConfigError(f"max_value must be positive, got {max_value}")
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(max_value**2 / mse))


def _window_mean(x: Tensor, window: int) -> Tensor:
    kernel = np.full((window, window), 1.0 / (window * window))
    return convolve2d(x, kernel, mode="valid")


def _ssim_channel(a: Tensor, b: Tensor, data_range: float, window: int) -> float:
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _window_mean(a, window)
    mu_b = _window_mean(b, window)
    var_a = _window_mean(a * a, window) - mu_a * mu_a
    var_b = _window_mean(b * b, window) - mu_b * mu_b
    cov = _window_mean(a * b, window) - mu_a * mu_b
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return float(np.mean(ssim_map))


def ssim(a: Tensor, b: Tensor, data_range: float = 1.0, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over every ``window`` x ``window`` window at stride 1.

    Uniform window weights and population statistics; multi-channel images
    average the per-channel scores. Identical inputs score exactly 1.0.

    Raises:
        DimensionError: On shape mismatch or images smaller than the window
    """
    _check_pair(a, b)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if a.shape[0] < window or a.shape[1] < window:
        raise DimensionError(f"SSIM needs images of at least {window}x{window}, got {a.shape[:2]}")
    if np.array_equal(a, b):
        return 1.0
    return float(np.mean([_ssim_channel(a[..., c], b[..., c], data_range, window) for c in range(a.shape[2])]))


def top1_accuracy(t: Tensor, true_permutation: Tensor) -> float:
    """Fraction of rows whose argmax equals the true exemplar index."""
    t = np.asarray(t)
    perm = np.asarray(true_permutation)
    if t.ndim != 2 or t.shape[0] != perm.shape[0]:
        raise DimensionError(f"T is {t.shape}, permutation has {perm.shape[0]} entries")
    return float(np.mean(np.argmax(t, axis=1) == perm))
