"""Synthetic degradation: motion-blur kernels, noise, and dataset builds.

A dataset sample is sharp -> blurry (circular convolution with a
random-walk PSF) -> noisy (AWGN with sigma on the 0-255 scale).  Every
per-sample random draw derives from (dataset seed, sample id), so
rebuilds are bit-identical regardless of processing order.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ValidationError
from .fileio import read_png, resize_image, write_png, write_psf_text
from .imaging import check_image, check_psf, fft_convolve

SIGMA_LEVELS = (10.0, 20.0, 30.0, 40.0)

MANIFEST_HEADER = "id,sharp,blurry,noisy,psf,sigma,seed"

# Sub-stream tags under each per-sample seed.
_STREAM_DRAW = 0
_STREAM_WALK = 1
_STREAM_NOISE = 2


@dataclass(frozen=True)
class WalkParams:
    """Random-walk trajectory parameters for PSF generation."""

    l: int
    steps: int = 256
    inertia: float = 0.7
    jitter: float = 0.5
    seed: int | Sequence[int] = 0

    def validate(self) -> "WalkParams":
        if not 3 <= self.l <= 24:
            raise ValidationError(f"l must be in [3, 24], got {self.l}")
        if self.steps < 2:
            raise ValidationError(f"steps must be >= 2, got {self.steps}")
        if not 0.0 <= self.inertia < 1.0:
            raise ValidationError(f"inertia must be in [0, 1), got {self.inertia}")
        if self.jitter < 0.0:
            raise ValidationError(f"jitter must be >= 0, got {self.jitter}")
        return self


@dataclass(frozen=True)
class NoiseSpec:
    """AWGN parameters; sigma is on the 0-255 scale."""

    sigma: float
    seed: int | Sequence[int] = 0

    def validate(self) -> "NoiseSpec":
        if self.sigma < 0:
            raise ValidationError(f"sigma must be >= 0, got {self.sigma}")
        return self


class ManifestRow(NamedTuple):
    id: str
    sharp: str
    blurry: str
    noisy: str
    psf: str
    sigma: float
    seed: int


def random_walk_psf(params: WalkParams) -> np.ndarray:
    """Generate a motion-blur kernel from an inertial random walk.

    The trajectory x[t+1] = x[t] + v[t], v[t+1] = inertia*v[t] +
    jitter*g[t] is recentered on its centroid and splatted bilinearly
    onto the (2l+1)^2 grid; samples that leave the grid are clipped to
    the border.
    """
    params.validate()
    rng = np.random.default_rng(params.seed)
    side = 2 * params.l + 1

    pos = np.zeros((params.steps, 2))
    v = np.zeros(2)
    for t in range(params.steps - 1):
        pos[t + 1] = pos[t] + v
        v = params.inertia * v + params.jitter * rng.standard_normal(2)

    pos -= pos.mean(axis=0)
    coords = np.clip(pos + params.l, 0.0, side - 1.0)

    grid = np.zeros((side, side))
    i0 = np.floor(coords[:, 0]).astype(int)
    j0 = np.floor(coords[:, 1]).astype(int)
    fy = coords[:, 0] - i0
    fx = coords[:, 1] - j0
    i1 = np.minimum(i0 + 1, side - 1)
    j1 = np.minimum(j0 + 1, side - 1)
    np.add.at(grid, (i0, j0), (1.0 - fy) * (1.0 - fx))
    np.add.at(grid, (i1, j0), fy * (1.0 - fx))
    np.add.at(grid, (i0, j1), (1.0 - fy) * fx)
    np.add.at(grid, (i1, j1), fy * fx)

    return grid / grid.sum()


def blur(img: np.ndarray, psf: np.ndarray) -> np.ndarray:
    """Circular convolution with the PSF (shared convention with recovery)."""
    check_psf(psf)
    return fft_convolve(img, psf)


def add_noise(img: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Add i.i.d. Gaussian noise with std sigma/255; output is not clamped."""
    spec.validate()
    img = check_image(img, "add_noise")
    if spec.sigma == 0:
        return img.copy()
    rng = np.random.default_rng(spec.seed)
    return img + rng.standard_normal(img.shape) * (spec.sigma / 255.0)


def sample_seed_for(dataset_seed: int, sample_index: int) -> int:
    """Deterministic per-sample seed recorded in the manifest."""
    ss = np.random.SeedSequence([int(dataset_seed), int(sample_index)])
    return int(ss.generate_state(1, np.uint64)[0])


def regenerate_noise(blurry: np.ndarray, sigma: float, sample_seed: int) -> np.ndarray:
    """Reproduce the unclamped noisy image for a manifest row.

    Training consumes this (exact noise, no PNG quantization); the
    stored noisy PNG is the clamped export of the same realization.
    """
    return add_noise(blurry, NoiseSpec(sigma=sigma, seed=[sample_seed, _STREAM_NOISE]))


def make_scene(size: int, seed: int | Sequence[int], channels: int = 1) -> np.ndarray:
    """Procedural sharp test image: ramp, soft blobs, hard-edged boxes, texture.

    Gives both strong edges (useful deblurring signal) and broadband
    texture (spectra without zero bins).
    """
    if channels not in (1, 3):
        raise ValidationError(f"channels must be 1 or 3, got {channels}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / float(size)

    def one_plane():
        theta = rng.uniform(0, 2 * np.pi)
        img = 0.45 + 0.25 * ((xx - 0.5) * np.cos(theta) + (yy - 0.5) * np.sin(theta))
        for _ in range(rng.integers(3, 7)):
            cy, cx = rng.uniform(0.1, 0.9, size=2)
            rad = rng.uniform(0.05, 0.25)
            amp = rng.uniform(-0.35, 0.35)
            img += amp * np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * rad**2)))
        for _ in range(rng.integers(2, 5)):
            y0, x0 = rng.uniform(0.05, 0.7, size=2)
            h, w = rng.uniform(0.1, 0.3, size=2)
            lvl = rng.uniform(0.1, 0.9)
            box = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
            img = np.where(box, 0.6 * img + 0.4 * lvl, img)
        noise = rng.standard_normal((size, size))
        fn = np.fft.fft2(noise)
        fy = np.fft.fftfreq(size)[:, None]
        fx = np.fft.fftfreq(size)[None, :]
        soft = np.real(np.fft.ifft2(fn / (1.0 + 40.0 * (fy**2 + fx**2))))
        soft /= max(soft.std(), 1e-12)
        img += 0.04 * soft
        return np.clip(img, 0.0, 1.0)

    if channels == 1:
        return one_plane()
    base = one_plane()
    out = np.stack([np.clip(base + 0.08 * rng.standard_normal(), 0, 1) for _ in range(3)], axis=2)
    return out


def effective_l_max(l_max: int, size: int) -> int:
    """Kernel half-side cap at training size: l may not exceed size/8."""
    return min(l_max, size // 8)


def write_manifest(path: str | os.PathLike, rows: Sequence[ManifestRow]) -> None:
    lines = [MANIFEST_HEADER]
    for r in rows:
        lines.append(
            f"{r.id},{r.sharp},{r.blurry},{r.noisy},{r.psf},{r.sigma:g},{r.seed}"
        )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path: str | os.PathLike) -> list[ManifestRow]:
    """Read a manifest; paths stay relative to the manifest directory."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != MANIFEST_HEADER:
        raise ValidationError(f"{path}: bad or missing manifest header")
    rows = []
    seen = set()
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 7:
            raise ValidationError(f"{path}: bad manifest row {ln!r}")
        row = ManifestRow(
            id=parts[0],
            sharp=parts[1],
            blurry=parts[2],
            noisy=parts[3],
            psf=parts[4],
            sigma=float(parts[5]),
            seed=int(parts[6]),
        )
        if row.id in seen:
            raise ValidationError(f"{path}: duplicate sample id {row.id}")
        seen.add(row.id)
        rows.append(row)
    return rows


def build_dataset(
    sharp_dir: str | os.PathLike,
    out_dir: str | os.PathLike,
    count: int,
    seed: int,
    *,
    size: int = 64,
    channels: int = 1,
    l_min: int = 3,
    l_max: int = 24,
    steps: int = 256,
    inertia: float = 0.7,
    jitter: float = 0.5,
    sigma_levels: Sequence[float] = SIGMA_LEVELS,
) -> list[ManifestRow]:
    """Degrade ``count`` sharp PNGs into (sharp, blurry, noisy, psf) samples.

    Writes the four artifact sets plus manifest.csv and
    manifest.meta.json under ``out_dir``.  Unreadable inputs are
    skipped with a warning; producing no samples is an error.
    """
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    eff_l_max = effective_l_max(l_max, size)
    if eff_l_max < l_min:
        raise ValidationError(
            f"size {size} caps l at {eff_l_max}, below l_min {l_min}"
        )
    if not os.path.isdir(sharp_dir):
        raise ValidationError(f"sharp directory not found: {sharp_dir}")
    files = sorted(
        f for f in os.listdir(sharp_dir) if f.lower().endswith(".png")
    )
    if len(files) < count:
        raise ValidationError(
            f"{sharp_dir}: need {count} sharp PNGs, found {len(files)}"
        )

    out_dir = os.fspath(out_dir)
    for sub in ("sharp", "blurry", "noisy", "psf"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    rows: list[ManifestRow] = []
    skipped: list[str] = []
    src_iter = iter(files)
    while len(rows) < count:
        try:
            fname = next(src_iter)
        except StopIteration:
            break
        try:
            sharp = read_png(os.path.join(sharp_dir, fname))
        except ValidationError:
            skipped.append(fname)
            continue
        idx = len(rows)
        sid = f"{idx:04d}"
        s_seed = sample_seed_for(seed, idx)
        rng = np.random.default_rng([s_seed, _STREAM_DRAW])

        sharp = resize_image(sharp, size)
        if channels == 1 and sharp.ndim == 3:
            from .imaging import luminance

            sharp = luminance(sharp)

        l = int(rng.integers(l_min, eff_l_max + 1))
        psf = random_walk_psf(
            WalkParams(l=l, steps=steps, inertia=inertia, jitter=jitter,
                       seed=[s_seed, _STREAM_WALK])
        )
        blurry = blur(sharp, psf)
        sigma = float(sigma_levels[int(rng.integers(0, len(sigma_levels)))])
        noisy = regenerate_noise(blurry, sigma, s_seed)

        rel = {k: f"{k}/{sid}.png" for k in ("sharp", "blurry", "noisy")}
        rel["psf"] = f"psf/{sid}.txt"
        write_png(os.path.join(out_dir, rel["sharp"]), sharp)
        write_png(os.path.join(out_dir, rel["blurry"]), blurry)
        write_png(os.path.join(out_dir, rel["noisy"]), noisy)
        write_psf_text(os.path.join(out_dir, rel["psf"]), psf)
        rows.append(
            ManifestRow(sid, rel["sharp"], rel["blurry"], rel["noisy"],
                        rel["psf"], sigma, s_seed)
        )

    if skipped:
        print(f"build_dataset: skipped {len(skipped)} unreadable file(s): "
              + ", ".join(skipped))
    if not rows:
        raise ValidationError("build_dataset: no samples produced")

    write_manifest(os.path.join(out_dir, "manifest.csv"), rows)
    meta = {
        "count": len(rows),
        "seed": seed,
        "size": size,
        "channels": channels,
        "l_min": l_min,
        "l_max_requested": l_max,
        "l_max_effective": eff_l_max,
        "steps": steps,
        "inertia": inertia,
        "jitter": jitter,
        "sigma_levels": list(sigma_levels),
    }
    with open(os.path.join(out_dir, "manifest.meta.json"), "w", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return rows
