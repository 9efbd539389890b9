"""Image fidelity metrics and histogram statistics.

PSNR and SSIM follow the usual conventions for unit-range images (SSIM on
ITU-R 601 luma with an 11x11 Gaussian window, sigma 1.5, K1=0.01,
K2=0.03).  Histograms use 256 bins over [0, 1] with a closed last bin;
the normalized-L1 histogram distance quantifies how strongly a wavelet
band swap perturbs an image's intensity distribution.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])  # ITU-R 601

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class Histogram:
    """Per-channel intensity counts over [0, 1]."""

    bins: np.ndarray  # (C, nbins) int64
    total: int  # pixels per channel
    clipped: int = 0  # out-of-range values clipped before counting


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images."""
    _check_same_shape(a, b)
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def luma(img: np.ndarray) -> np.ndarray:
    """Collapse a color image to ITU-R 601 luma; grayscale passes through."""
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 1:
        return img[:, :, 0]
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ LUMA_WEIGHTS.astype(img.dtype)
    raise ValueError(f"expected (H, W), (H, W, 1) or (H, W, 3), got {img.shape}")


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    patches = sliding_window_view(img, win.shape)
    return np.einsum("hwkl,kl->hw", patches, win)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local structural similarity on luma; 1.0 for identical images."""
    _check_same_shape(a, b)
    x = luma(a).astype(np.float64)
    y = luma(b).astype(np.float64)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(
            f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    mu_x = _filter_valid(x, win)
    mu_y = _filter_valid(y, win)
    xx = _filter_valid(x * x, win) - mu_x * mu_x
    yy = _filter_valid(y * y, win) - mu_y * mu_y
    xy = _filter_valid(x * y, win) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def histogram(img: np.ndarray, bins: int = 256) -> Histogram:
    """Per-channel counts; bin k covers [k/bins, (k+1)/bins), last bin closed."""
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ValueError(f"expected (H, W[, C]) image, got {img.shape}")
    h, w, c = img.shape
    flat = img.reshape(-1, c)
    out_of_range = int(np.count_nonzero((flat < 0.0) | (flat > 1.0)))
    if out_of_range:
        warnings.warn(
            f"histogram: clipped {out_of_range} value(s) outside [0, 1]",
            RuntimeWarning,
            stacklevel=2,
        )
        flat = np.clip(flat, 0.0, 1.0)
    idx = np.minimum((flat * bins).astype(np.int64), bins - 1)
    counts = np.zeros((c, bins), dtype=np.int64)
    for ch in range(c):
        counts[ch] = np.bincount(idx[:, ch], minlength=bins)
    return Histogram(bins=counts, total=h * w, clipped=out_of_range)


def hist_distance(h1: Histogram, h2: Histogram) -> float:
    """L1 distance between normalized histograms, averaged over channels.

    Ranges over [0, 2]; 0 for identical distributions, 2 for disjoint ones.
    """
    if h1.bins.shape != h2.bins.shape:
        raise ValueError(
            f"histogram shapes differ: {h1.bins.shape} vs {h2.bins.shape}"
        )
    p = h1.bins.astype(np.float64) / h1.total
    q = h2.bins.astype(np.float64) / h2.total
    return float(np.mean(np.sum(np.abs(p - q), axis=1)))
