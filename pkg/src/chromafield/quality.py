"""Image quality scores: PSNR and single-scale SSIM."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import convolve2d

from .color import ImageBuf

_SSIM_WIN = 11
_SSIM_SIGMA = 1.5
_C1 = (0.01 * 1.0) ** 2  # stabilizers from dynamic range 1.0
_C2 = (0.03 * 1.0) ** 2


def _as_array(img) -> np.ndarray:
    if isinstance(img, ImageBuf):
        return img.data.astype(np.float64)
    return np.asarray(img, dtype=np.float64)


def psnr(a, b) -> float:
    """10*log10(1/MSE) for images in [0, 1]; +inf for identical images."""
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise ValueError(f"psnr shape mismatch: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window() -> np.ndarray:
    r = np.arange(_SSIM_WIN) - (_SSIM_WIN - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * _SSIM_SIGMA**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a, b) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5) on
    grayscale images in [0, 1]."""
    x, y = _as_array(a), _as_array(b)
    if x.ndim == 3:
        if x.shape[2] != 1:
            raise ValueError("ssim expects grayscale input")
        x, y = x[:, :, 0], y[:, :, 0]
    if x.shape != y.shape:
        raise ValueError(f"ssim shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < _SSIM_WIN:
        raise ValueError(f"ssim needs images of at least {_SSIM_WIN}x{_SSIM_WIN}")

    win = _gaussian_window()

    def f(img):
        return convolve2d(img, win, mode="valid")

    mu_x, mu_y = f(x), f(y)
    var_x = f(x * x) - mu_x**2
    var_y = f(y * y) - mu_y**2
    cov = f(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + _C1) * (2 * cov + _C2)
    den = (mu_x**2 + mu_y**2 + _C1) * (var_x + var_y + _C2)
    return float(np.mean(num / den))
