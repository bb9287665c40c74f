"""Full-reference image quality metrics: PSNR and single-scale SSIM."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import convolve2d

from .errors import SizeError
from .image import Image, QualityReport, check_same_shape

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 1.0

PSNR_CAP_DB = math.inf


def psnr(a: Image, b: Image, clip: bool = True) -> float:
    """Peak signal-to-noise ratio in dB with peak value 1.0.

    Parameters
    ----------
    a, b : Image
        Images of identical shape.
    clip : bool
        Clip both inputs to [0, 1] before comparing (display convention
        for final outputs); disable for raw unclipped comparisons.

    Returns
    -------
    float
        10 * log10(1 / MSE), or ``inf`` for identical inputs.
    """
    check_same_shape(a, b)
    da, db = a.data, b.data
    if clip:
        da, db = np.clip(da, 0.0, 1.0), np.clip(db, 0.0, 1.0)
    mse = float(np.mean((da - db) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_kernel(radius: int, sigma: float) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    return np.outer(k, k)


_KERNEL = _gaussian_kernel(SSIM_WINDOW // 2, SSIM_SIGMA)


def _filt(plane: np.ndarray) -> np.ndarray:
    return convolve2d(plane, _KERNEL, mode="same", boundary="symm")


def _ssim_plane(a: np.ndarray, b: np.ndarray) -> float:
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    ua, ub = _filt(a), _filt(b)
    va = _filt(a * a) - ua * ua
    vb = _filt(b * b) - ub * ub
    cov = _filt(a * b) - ua * ub
    s = ((2 * ua * ub + c1) * (2 * cov + c2)) / ((ua**2 + ub**2 + c1) * (va + vb + c2))
    pad = SSIM_WINDOW // 2
    return float(s[pad:-pad, pad:-pad].mean())


def ssim(a: Image, b: Image) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5).

    Constants K1 = 0.01, K2 = 0.03, dynamic range L = 1. Multichannel
    images are scored per channel and averaged. The map is averaged over
    the region where the window fits entirely inside the image.
    """
    check_same_shape(a, b)
    if min(a.height, a.width) < SSIM_WINDOW:
        raise SizeError(f"ssim needs images at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    vals = [_ssim_plane(a.data[:, :, k], b.data[:, :, k]) for k in range(a.channels)]
    return float(np.mean(vals))


def evaluate(reference: Image, test: Image, clip: bool = True) -> QualityReport:
    """Score ``test`` against ``reference`` and return a QualityReport.

    SSIM is computed on [0, 1]-clipped inputs; set ``clip=False`` to feed
    PSNR the raw values. Images narrower than the SSIM window get a NaN
    SSIM instead of an error.
    """
    p = psnr(reference, test, clip=clip)
    try:
        s = ssim(reference.clipped(), test.clipped())
    except SizeError:
        s = float("nan")
    return QualityReport(psnr_db=p, ssim=s)
