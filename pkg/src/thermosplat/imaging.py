"""Windowed image statistics shared by the SSIM variants and smoothness terms."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import as_tensor, filter2d, pad_replicate
from .errors import DataError


def gaussian_kernel1d(size, sigma=1.5):
    """Normalized 1-D Gaussian taps of odd ``size``."""
    if size < 3 or size % 2 == 0:
        raise DataError(f"window size must be odd and >= 3, got {size}")
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def gaussian_window(size, sigma=1.5):
    """Normalized separable Gaussian kernel of odd ``size``."""
    g = gaussian_kernel1d(size, sigma)
    return np.outer(g, g)


def gaussian_blur(img, size, sigma=1.5):
    """Same-size Gaussian filtering with edge-replicate padding.

    Applied as two 1-D passes (the window is separable), which keeps the
    11-tap SSIM windows cheap.
    """
    img = as_tensor(img)
    g = gaussian_kernel1d(size, sigma).astype(img.dtype.type)
    pad = size // 2
    padded = pad_replicate(img, pad)
    return filter2d(filter2d(padded, g[:, None]), g[None, :])


def local_filter(img, kernel):
    """Same-size windowed correlation with edge-replicate padding."""
    img = as_tensor(img)
    pad = kernel.shape[0] // 2
    return filter2d(pad_replicate(img, pad), np.asarray(kernel, dtype=img.dtype.type))


def local_moments(a, b, size, sigma=1.5):
    """Windowed means, variances and covariance of two single-channel images."""
    mu_a = gaussian_blur(a, size, sigma)
    mu_b = gaussian_blur(b, size, sigma)
    var_a = gaussian_blur(a * a, size, sigma) - mu_a * mu_a
    var_b = gaussian_blur(b * b, size, sigma) - mu_b * mu_b
    cov = gaussian_blur(a * b, size, sigma) - mu_a * mu_b
    return mu_a, mu_b, var_a, var_b, cov


def forward_differences(img):
    """|dI/dx| and |dI/dy| via forward differences; (H, W) or (H, W, C)."""
    img = as_tensor(img)
    gx = ad.absolute(img[:, 1:] - img[:, :-1])
    gy = ad.absolute(img[1:, :] - img[:-1, :])
    return gx, gy
