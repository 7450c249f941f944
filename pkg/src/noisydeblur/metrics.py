"""Image and kernel quality metrics: PSNR, SSIM, kernel similarity."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .imaging import check_image, luminance

PSNR_CAP_DB = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a, b, name):
    a = check_image(a, name)
    b = check_image(b, name)
    if a.shape != b.shape:
        raise ValidationError(f"{name}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB against a peak value of 1.0.

    MSE is pooled over all channels.  Capped at 99.0 dB so identical
    images stay finite in aggregates.
    """
    a, b = _check_pair(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (coords / sigma) ** 2)
    return g / g.sum()


def _valid_filter(img: np.ndarray, win1d: np.ndarray) -> np.ndarray:
    # Separable correlation, valid region only (no border padding).
    k = win1d.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=1) @ win1d
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=0) @ win1d


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity with an 11x11 Gaussian window, sigma 1.5.

    Stabilizers use K1=0.01, K2=0.03 on the [0, 1] range.  Color images
    are reduced to luminance first.  The local map is computed only
    where the window fits entirely inside the image.
    """
    a, b = _check_pair(a, b, "ssim")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ValidationError(
            f"ssim: image {a.shape[:2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    x = luminance(a)
    y = luminance(b)
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)

    mu_x = _valid_filter(x, win)
    mu_y = _valid_filter(y, win)
    xx = _valid_filter(x * x, win) - mu_x * mu_x
    yy = _valid_filter(y * y, win) - mu_y * mu_y
    xy = _valid_filter(x * y, win) - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def kernel_similarity(p: np.ndarray, q: np.ndarray) -> float:
    """Maximum normalized cross-correlation over all integer shifts.

    Both kernels are zero-padded to a shared canvas before the search,
    so the score is 1 exactly when one kernel is a translate of a
    positive scaling of the other.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    for k, name in ((p, "p"), (q, "q")):
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ValidationError(f"kernel_similarity: {name} must be square 2-D")
        if not np.all(np.isfinite(k)):
            raise ValidationError(f"kernel_similarity: {name} has non-finite values")
        if not np.any(k):
            raise ValidationError(f"kernel_similarity: {name} is all zero")

    big = max(p.shape[0], q.shape[0])
    canvas = 2 * big - 1

    def _center(k):
        out = np.zeros((canvas, canvas))
        off = (canvas - k.shape[0]) // 2
        out[off : off + k.shape[0], off : off + k.shape[0]] = k
        return out

    pc = _center(p)
    qc = _center(q)
    # Linear cross-correlation via FFT on a grid large enough to avoid wrap.
    n = 2 * canvas
    fp = np.fft.rfft2(pc, s=(n, n))
    fq = np.fft.rfft2(qc, s=(n, n))
    corr = np.fft.irfft2(np.conj(fp) * fq, s=(n, n))
    best = float(corr.max())
    return best / float(np.linalg.norm(p) * np.linalg.norm(q))
