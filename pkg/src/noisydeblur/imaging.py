"""Pixel containers, convolution, and gradient operators.

Images are plain numpy arrays: grayscale ``(H, W)`` or color ``(H, W, 3)``,
floating point, nominal range [0, 1].  Values may leave [0, 1] inside
solvers; clamping happens only at export (see fileio).

PSFs are odd-sided square nonnegative arrays summing to 1.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ValidationError

BOUNDARY_MODES = ("circular", "replicate")

PSF_SUM_TOL = 1e-9


class GradientField(NamedTuple):
    """Forward differences of an image, circular wrap at the far edges."""

    horizontal: np.ndarray
    vertical: np.ndarray


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate an image array and return it as float64."""
    img = np.asarray(img)
    if img.ndim == 2:
        pass
    elif img.ndim == 3 and img.shape[2] == 3:
        pass
    else:
        raise ValidationError(
            f"{name}: expected (H, W) or (H, W, 3), got shape {img.shape}"
        )
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValidationError(f"{name}: empty image {img.shape}")
    return img.astype(np.float64, copy=False)


def check_psf(psf: np.ndarray, name: str = "psf") -> np.ndarray:
    """Validate PSF invariants: square, odd side, nonnegative, unit sum."""
    psf = np.asarray(psf, dtype=np.float64)
    if psf.ndim != 2 or psf.shape[0] != psf.shape[1]:
        raise ValidationError(f"{name}: expected square 2-D kernel, got {psf.shape}")
    if psf.shape[0] % 2 == 0:
        raise ValidationError(f"{name}: side must be odd, got {psf.shape[0]}")
    if np.any(psf < 0):
        raise ValidationError(f"{name}: negative weights")
    s = psf.sum()
    if not np.isfinite(s) or abs(s - 1.0) > PSF_SUM_TOL:
        raise ValidationError(f"{name}: weights must sum to 1 (got {s!r})")
    return psf


def delta_psf(side: int) -> np.ndarray:
    """Identity kernel: all mass in the central cell."""
    if side < 1 or side % 2 == 0:
        raise ValidationError(f"delta_psf: side must be odd and positive, got {side}")
    k = np.zeros((side, side))
    k[side // 2, side // 2] = 1.0
    return k


def normalize_psf(weights: np.ndarray) -> np.ndarray:
    """Clip negatives to zero and rescale to unit sum."""
    w = np.maximum(np.asarray(weights, dtype=np.float64), 0.0)
    s = w.sum()
    if s <= 0 or not np.isfinite(s):
        raise ValidationError("normalize_psf: kernel has no positive mass")
    return w / s


def luminance(img: np.ndarray) -> np.ndarray:
    """Collapse a color image to luminance; grayscale passes through."""
    img = check_image(img)
    if img.ndim == 2:
        return img
    return 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]


def _check_conv_args(img, psf, name):
    img = check_image(img, name)
    psf = check_psf(psf)
    if psf.shape[0] > 2 * min(img.shape[0], img.shape[1]):
        raise ValidationError(
            f"psf side {psf.shape[0]} too large for image {img.shape[:2]}"
        )
    return img, psf


def convolve(img: np.ndarray, psf: np.ndarray, mode: str = "circular") -> np.ndarray:
    """Spatial 2-D convolution under the given boundary mode.

    True convolution (the kernel is flipped): out[i, j] sums
    psf[l+a, l+b] * img[i-a, j-b] over kernel taps, per channel for
    color images.  Output matches the input shape.
    """
    img, psf = _check_conv_args(img, psf, "convolve")
    if mode not in BOUNDARY_MODES:
        raise ValidationError(f"unknown boundary mode {mode!r}")
    l = psf.shape[0] // 2
    out = np.zeros_like(img)
    if mode == "circular":
        for a in range(-l, l + 1):
            for b in range(-l, l + 1):
                w = psf[l + a, l + b]
                if w != 0.0:
                    out += w * np.roll(img, (a, b), axis=(0, 1))
    else:
        pad = ((l, l), (l, l)) + (((0, 0),) if img.ndim == 3 else ())
        padded = np.pad(img, pad, mode="edge")
        h, w_ = img.shape[0], img.shape[1]
        for a in range(-l, l + 1):
            for b in range(-l, l + 1):
                w = psf[l + a, l + b]
                if w != 0.0:
                    out += w * padded[l - a : l - a + h, l - b : l - b + w_]
    return out


def psf2otf(psf: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Zero-pad a centered kernel to ``shape`` and move its center to (0, 0).

    The result's FFT is the transfer function of circular convolution
    with the kernel.
    """
    psf = np.asarray(psf, dtype=np.float64)
    h, w = shape
    if psf.shape[0] > h or psf.shape[1] > w:
        raise ValidationError(f"psf {psf.shape} larger than target {shape}")
    pad = np.zeros(shape)
    pad[: psf.shape[0], : psf.shape[1]] = psf
    pad = np.roll(pad, (-(psf.shape[0] // 2), -(psf.shape[1] // 2)), axis=(0, 1))
    return np.fft.fft2(pad)


def fft_convolve(img: np.ndarray, psf: np.ndarray) -> np.ndarray:
    """Circular convolution via the FFT; equals convolve(..., "circular")."""
    img, psf = _check_conv_args(img, psf, "fft_convolve")
    otf = psf2otf(psf, (img.shape[0], img.shape[1]))
    if img.ndim == 2:
        return np.real(np.fft.ifft2(np.fft.fft2(img) * otf))
    out = np.empty_like(img)
    for c in range(3):
        out[:, :, c] = np.real(np.fft.ifft2(np.fft.fft2(img[:, :, c]) * otf))
    return out


def gradient(img: np.ndarray) -> GradientField:
    """Forward differences with circular wrap in both directions.

    The wrap makes the operator diagonal under the DFT, which the
    closed-form latent-image solves rely on.
    """
    img = check_image(img, "gradient")
    gh = np.roll(img, -1, axis=1) - img
    gv = np.roll(img, -1, axis=0) - img
    return GradientField(horizontal=gh, vertical=gv)


def gradient_adjoint(field: GradientField) -> np.ndarray:
    """Adjoint of ``gradient`` (negative circular divergence)."""
    gh, gv = field
    return (np.roll(gh, 1, axis=1) - gh) + (np.roll(gv, 1, axis=0) - gv)
