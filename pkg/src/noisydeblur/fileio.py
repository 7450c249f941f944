"""File formats: 8-bit PNG images and the plain-text PSF format.

PSF text format::

    PSF <side>
    w w ... w     (side rows of side decimal floats)

PNG export clamps to [0, 1] and quantizes to 8 bits; import divides
by 255.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image as PILImage

from .errors import ValidationError
from .imaging import check_image, check_psf


def read_png(path: str | os.PathLike) -> np.ndarray:
    """Load a PNG as float64 in [0, 1]; grayscale (H, W) or color (H, W, 3)."""
    try:
        with PILImage.open(path) as im:
            if im.mode in ("L", "I;16", "I", "1"):
                im = im.convert("L")
                arr = np.asarray(im, dtype=np.float64)
            else:
                im = im.convert("RGB")
                arr = np.asarray(im, dtype=np.float64)
    except (OSError, SyntaxError) as exc:
        raise ValidationError(f"cannot read PNG {path}: {exc}") from exc
    return arr / 255.0


def write_png(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write an image as 8-bit PNG, clamping to [0, 1] first."""
    img = check_image(img, "write_png")
    data = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    PILImage.fromarray(data, mode=mode).save(path, format="PNG")


def resize_image(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize to size x size, staying in [0, 1]."""
    img = check_image(img, "resize_image")
    if img.shape[0] == size and img.shape[1] == size:
        return img
    data = np.clip(img, 0.0, 1.0)
    if data.ndim == 2:
        pim = PILImage.fromarray((data * 255.0).astype(np.float32), mode="F")
        out = np.asarray(pim.resize((size, size), PILImage.BILINEAR), dtype=np.float64)
        return np.clip(out / 255.0, 0.0, 1.0)
    chans = []
    for c in range(3):
        pim = PILImage.fromarray((data[:, :, c] * 255.0).astype(np.float32), mode="F")
        chans.append(
            np.asarray(pim.resize((size, size), PILImage.BILINEAR), dtype=np.float64)
        )
    return np.clip(np.stack(chans, axis=2) / 255.0, 0.0, 1.0)


def write_psf_text(path: str | os.PathLike, psf: np.ndarray) -> None:
    """Write a PSF in the text format with full float round-trip precision."""
    psf = check_psf(psf)
    side = psf.shape[0]
    lines = [f"PSF {side}"]
    for row in psf:
        lines.append(" ".join(repr(float(v)) for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_psf_text(path: str | os.PathLike) -> np.ndarray:
    """Read and validate a PSF from the text format."""
    with open(path) as fh:
        raw = fh.read().split("\n")
    lines = [ln for ln in raw if ln.strip() != ""]
    if not lines:
        raise ValidationError(f"{path}: empty PSF file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "PSF":
        raise ValidationError(f"{path}: bad header {lines[0]!r}")
    try:
        side = int(head[1])
    except ValueError as exc:
        raise ValidationError(f"{path}: bad side {head[1]!r}") from exc
    if len(lines) - 1 != side:
        raise ValidationError(f"{path}: expected {side} rows, got {len(lines) - 1}")
    rows = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != side:
            raise ValidationError(f"{path}: expected {side} values per row")
        try:
            rows.append([float(v) for v in parts])
        except ValueError as exc:
            raise ValidationError(f"{path}: bad value in row") from exc
    return check_psf(np.array(rows), name=str(path))
