"""Image quality metrics: PSNR, SSIM, and cross-view PSNR variance.

PSNR variance pools per-view PSNR values across trials and reports their
population variance; a stable reconstruction scores similarly on viewpoints
near and far from the training cameras, keeping the variance low.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .errors import ShapeError

PSNR_CAP = 99.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """-10 log10(MSE) over all channels for images in [0, 1].

    Identical images report the 99 dB sentinel instead of infinity.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(-10.0 * np.log10(mse), PSNR_CAP)


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(r * r) / (2.0 * sigma * sigma))
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def ssim(a: np.ndarray, b: np.ndarray, k1: float = 0.01, k2: float = 0.03,
         win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity with a Gaussian window, data range 1.0.

    Grayscale or (H, W, C) images; channels are scored independently and
    averaged.  The local-statistics maps use valid convolution only, so images
    must be at least the window size.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < win_size or a.shape[1] < win_size:
        raise ValueError(f"images must be at least {win_size}x{win_size} for SSIM")
    kern = _gaussian_kernel(win_size, sigma)
    c1, c2 = k1 * k1, k2 * k2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx = convolve2d(x, kern, mode="valid")
        my = convolve2d(y, kern, mode="valid")
        sxx = convolve2d(x * x, kern, mode="valid") - mx * mx
        syy = convolve2d(y * y, kern, mode="valid") - my * my
        sxy = convolve2d(x * y, kern, mode="valid") - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def psnr_variance(values) -> float:
    """Population variance of pooled (view, trial) PSNR values."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size < 2:
        raise ValueError("psnr_variance needs at least 2 values")
    return float(np.var(values))


@dataclass
class EvalReport:
    """Per-view PSNR plus summary statistics for one evaluation pass."""

    per_view_psnr: list
    per_view_ssim: list

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.per_view_psnr))

    @property
    def variance_psnr(self) -> float:
        return psnr_variance(self.per_view_psnr) if len(self.per_view_psnr) > 1 else 0.0

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.per_view_ssim))

    def lines(self):
        for k, (p, s) in enumerate(zip(self.per_view_psnr, self.per_view_ssim)):
            yield f"view={k} psnr={p:.4f} ssim={s:.4f}"
        yield (f"summary mean_psnr={self.mean_psnr:.4f} "
               f"var_psnr={self.variance_psnr:.4f} mean_ssim={self.mean_ssim:.4f}")
