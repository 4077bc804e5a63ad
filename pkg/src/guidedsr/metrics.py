"""Reconstruction quality measures.

Both metrics treat images as float arrays on a [0, max_val] range and
compute in float64 regardless of input dtype.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import conv2d_raw
from .errors import ContractError, DimensionError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shapes {a.shape} vs {b.shape}")
    if max_val <= 0:
        raise ContractError(f"max_val must be positive, got {max_val}")
    mse = float(np.mean(np.square(a - b)))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(max_val * max_val / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Unit-mass separable Gaussian tap matrix."""
    if size < 1 or size % 2 == 0:
        raise ContractError(f"window size must be odd and positive, got {size}")
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _as_chw(img: np.ndarray, name: str) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img[None]
    if img.ndim == 3:
        return img
    raise DimensionError(f"{name}: expected (H,W) or (C,H,W), got shape {img.shape}")


def ssim(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """Mean structural similarity over valid (fully interior) windows,
    Gaussian-weighted, averaged across channels."""
    a = _as_chw(a, "ssim first input")
    b = _as_chw(b, "ssim second input")
    if a.shape != b.shape:
        raise DimensionError(f"ssim: shapes {a.shape} vs {b.shape}")
    c, h, w = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise DimensionError(
            f"ssim needs extents of at least {SSIM_WINDOW}, got {h}x{w}"
        )
    win = gaussian_window()[None, None]

    def smooth(x):
        return conv2d_raw(x[:, None], win, stride=1, pad=0)[:, 0]

    mu_a = smooth(a)
    mu_b = smooth(b)
    var_a = smooth(a * a) - mu_a * mu_a
    var_b = smooth(b * b) - mu_b * mu_b
    cov = smooth(a * b) - mu_a * mu_b
    c1 = (SSIM_K1 * max_val) ** 2
    c2 = (SSIM_K2 * max_val) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
