"""Blur-kernel recovery from the cascade's two outputs.

Two routes: direct spectral division of denoised by sharp (fast, noise
sensitive), and an alternating refinement that solves for a latent
sharp image under a hard gradient-sparsity prior plus an exemplar
gradient prior, re-estimating the kernel each round.  All solves use
circular boundaries so every subproblem is a closed-form Fourier
division.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ValidationError
from .imaging import (
    GradientField,
    check_image,
    check_psf,
    delta_psf,
    fft_convolve,
    gradient,
    luminance,
    psf2otf,
)

DENOM_FLOOR = 1e-12


@dataclass(frozen=True)
class HqsConfig:
    """Weights and schedule for the alternating kernel refinement."""

    lambda0: float = 0.002  # gradient-sparsity weight
    mu_exemplar: float = 0.001  # exemplar gradient weight
    beta0: float | None = None  # splitting penalty start; None -> 2*lambda0
    beta_growth: float = 2.0
    beta_max: float = 1e5
    outer_iters: int = 5
    kernel_ridge: float = 1e-3
    kernel_prune: float = 0.05
    epsilon_wiener: float = 1e-3
    gradient_domain: bool = True

    def validate(self) -> "HqsConfig":
        pos = {
            "lambda0": self.lambda0,
            "mu_exemplar": self.mu_exemplar,
            "beta_growth": self.beta_growth,
            "beta_max": self.beta_max,
            "kernel_ridge": self.kernel_ridge,
        }
        for k, v in pos.items():
            if v <= 0:
                raise ValidationError(f"{k} must be positive, got {v}")
        if self.beta0 is not None and self.beta0 <= 0:
            raise ValidationError(f"beta0 must be positive, got {self.beta0}")
        if self.beta_start >= self.beta_max:
            raise ValidationError(
                f"beta0 {self.beta_start} must be below beta_max {self.beta_max}"
            )
        if self.beta_growth <= 1:
            raise ValidationError("beta_growth must exceed 1")
        if self.outer_iters < 1:
            raise ValidationError("outer_iters must be >= 1")
        if not 0 <= self.kernel_prune < 0.5:
            raise ValidationError(
                f"kernel_prune must be in [0, 0.5), got {self.kernel_prune}"
            )
        if self.epsilon_wiener < 0:
            raise ValidationError("epsilon_wiener must be >= 0")
        return self

    @property
    def beta_start(self) -> float:
        return 2.0 * self.lambda0 if self.beta0 is None else self.beta0


class TraceRow(NamedTuple):
    outer_iter: int
    beta_rounds: int
    objective: float
    data_term: float
    l0_count: int


@dataclass
class LatentState:
    """Final state of one refinement run, including the objective trace."""

    latent: np.ndarray
    aux_grad: GradientField
    kernel: np.ndarray
    beta: float
    objective_trace: list[TraceRow]


def _as_luminance_pair(b1, i1, op):
    b = luminance(check_image(b1, op))
    i = luminance(check_image(i1, op))
    if b.shape != i.shape:
        raise ValidationError(f"{op}: shape mismatch {b.shape} vs {i.shape}")
    return b, i


def _check_side(side: int, shape) -> None:
    if side < 1 or side % 2 == 0:
        raise ValidationError(f"kernel side must be odd and positive, got {side}")
    if side > min(shape):
        raise ValidationError(f"kernel side {side} exceeds image {shape}")


def extract_kernel(full: np.ndarray, side: int, prune: float = 0.0) -> np.ndarray:
    """Turn a full-grid solution (mass around the origin, wrapped) into a PSF.

    Centers the array, recenters on the mass centroid of its positive
    part, crops to side x side, zeroes negatives, prunes weights below
    ``prune`` times the max, and normalizes to unit sum.
    """
    h, w = full.shape
    shifted = np.fft.fftshift(full)
    pos = np.maximum(shifted, 0.0)
    total = pos.sum()
    if total <= 0 or not np.isfinite(total):
        raise ValidationError("kernel extraction: no positive mass")
    ys, xs = np.mgrid[0:h, 0:w]
    cy = int(np.rint((pos * ys).sum() / total))
    cx = int(np.rint((pos * xs).sum() / total))
    shifted = np.roll(shifted, (h // 2 - cy, w // 2 - cx), axis=(0, 1))
    l = side // 2
    crop = shifted[h // 2 - l : h // 2 + l + 1, w // 2 - l : w // 2 + l + 1]
    crop = np.maximum(crop, 0.0)
    if prune > 0 and crop.max() > 0:
        crop = np.where(crop < prune * crop.max(), 0.0, crop)
    s = crop.sum()
    if s <= 0:
        raise ValidationError("kernel extraction: cropped kernel has no mass")
    return crop / s


def fft_deconv(b1, i1, side: int, eps: float = 1e-3) -> np.ndarray:
    """Kernel by regularized spectral division of blurry by sharp.

    Exact on circularly consistent noise-free pairs when eps = 0 and
    the sharp spectrum has no zero bins.
    """
    b, i = _as_luminance_pair(b1, i1, "fft_deconv")
    _check_side(side, b.shape)
    if not np.any(i):
        raise ValidationError("fft_deconv: sharp image is all zero")
    fi = np.fft.fft2(i)
    fb = np.fft.fft2(b)
    denom = np.abs(fi) ** 2 + eps
    if eps == 0.0 and denom.min() == 0.0:
        raise ValidationError("fft_deconv: zero spectral bin with eps = 0")
    full = np.real(np.fft.ifft2(fb * np.conj(fi) / denom))
    return extract_kernel(full, side)


def _diff_otfs(shape):
    e = np.zeros(shape)
    e[0, 0] = 1.0
    gh, gv = gradient(e)
    return np.fft.fft2(gh), np.fft.fft2(gv)


def latent_g_step(grad_latent: GradientField, lambda0: float, beta: float) -> GradientField:
    """Exact minimizer of the sparsity subproblem: joint hard threshold.

    Keeps a site's gradient pair when its squared magnitude reaches
    lambda0/beta, else zeroes both components.
    """
    if beta <= 0:
        raise ValidationError(f"beta must be positive, got {beta}")
    gh, gv = grad_latent
    keep = gh * gh + gv * gv >= lambda0 / beta
    return GradientField(np.where(keep, gh, 0.0), np.where(keep, gv, 0.0))


def latent_image_step(b1, i1, kernel, aux_grad: GradientField, beta: float,
                      mu_exemplar: float) -> np.ndarray:
    """Closed-form Fourier solve for the latent image.

    Minimizes the blur data term plus the exemplar gradient term plus
    the splitting penalty tying the latent gradient to the auxiliary
    field.
    """
    b, i = _as_luminance_pair(b1, i1, "latent_image_step")
    kernel = check_psf(kernel)
    if beta <= 0:
        raise ValidationError(f"beta must be positive, got {beta}")
    fk = psf2otf(kernel, b.shape)
    dh, dv = _diff_otfs(b.shape)
    fb = np.fft.fft2(b)
    fi = np.fft.fft2(i)
    fgh = np.fft.fft2(aux_grad.horizontal)
    fgv = np.fft.fft2(aux_grad.vertical)
    num = (
        np.conj(fk) * fb
        + np.conj(dh) * (beta * fgh + mu_exemplar * dh * fi)
        + np.conj(dv) * (beta * fgv + mu_exemplar * dv * fi)
    )
    den = (
        np.abs(fk) ** 2
        + (beta + mu_exemplar) * (np.abs(dh) ** 2 + np.abs(dv) ** 2)
        + DENOM_FLOOR
    )
    return np.real(np.fft.ifft2(num / den))


def kernel_least_squares(latent, b1, ridge: float, gradient_domain: bool = True):
    """Full-grid pre-projection kernel solve (ridge-regularized).

    Fits blur(latent) to b1, by default in the gradient domain to
    suppress the DC ambiguity; returns the raw full-grid solution with
    mass around the origin.
    """
    lat, b = _as_luminance_pair(latent, b1, "kernel_least_squares")
    if np.ptp(lat) == 0:
        raise ValidationError("kernel solve: latent image is constant")
    if gradient_domain:
        gl = gradient(lat)
        gb = gradient(b)
        pairs = [(gl.horizontal, gb.horizontal), (gl.vertical, gb.vertical)]
    else:
        pairs = [(lat, b)]
    num = np.zeros(lat.shape, dtype=complex)
    den = np.zeros(lat.shape)
    for x, y in pairs:
        fx = np.fft.fft2(x)
        den += np.abs(fx) ** 2
        num += np.conj(fx) * np.fft.fft2(y)
    return np.real(np.fft.ifft2(num / (den + ridge + DENOM_FLOOR)))


def kernel_step(latent, b1, side: int, cfg: HqsConfig) -> np.ndarray:
    """Least-squares kernel update followed by the nonnegativity
    projection (clip, prune, crop about the centroid, renormalize)."""
    cfg.validate()
    _check_side(side, np.asarray(latent).shape[:2])
    full = kernel_least_squares(latent, b1, cfg.kernel_ridge, cfg.gradient_domain)
    return extract_kernel(full, side, prune=cfg.kernel_prune)


def _l0_sites(field: GradientField) -> int:
    return int(np.count_nonzero((field.horizontal != 0) | (field.vertical != 0)))


def hqs_objective(latent, b1, i1, kernel, aux_grad: GradientField,
                  cfg: HqsConfig) -> tuple[float, float, int]:
    """(objective, data_term, l0_count) with the sparsity term counted
    as lambda0 times the number of nonzero auxiliary-gradient sites."""
    data = float(np.sum((fft_convolve(latent, kernel) - b1) ** 2))
    gl = gradient(latent)
    ge = gradient(i1)
    exemplar = cfg.mu_exemplar * float(
        np.sum((gl.horizontal - ge.horizontal) ** 2)
        + np.sum((gl.vertical - ge.vertical) ** 2)
    )
    count = _l0_sites(aux_grad)
    return data + cfg.lambda0 * count + exemplar, data, count


def estimate_psf_exemplar(b1, i1, side: int, cfg: HqsConfig | None = None):
    """Full alternating refinement; returns (kernel, LatentState).

    Initializes the kernel from the spectral division (falling back to
    a centered delta when that is rejected or degenerately flat) and
    the latent image from the sharp estimate, then alternates sparsity
    thresholding, latent solves over an annealed penalty ladder, and
    kernel re-estimation.
    """
    cfg = (cfg or HqsConfig()).validate()
    b, e = _as_luminance_pair(b1, i1, "estimate_psf_exemplar")
    _check_side(side, b.shape)

    try:
        kernel = fft_deconv(b, e, side, cfg.epsilon_wiener)
        if kernel.max() < 2.0 / side**2:  # indistinguishable from flat
            kernel = delta_psf(side)
    except ValidationError:
        kernel = delta_psf(side)

    latent = e.copy()
    aux = GradientField(np.zeros_like(latent), np.zeros_like(latent))
    trace: list[TraceRow] = []
    beta = cfg.beta_start
    for outer in range(1, cfg.outer_iters + 1):
        beta = cfg.beta_start
        rounds = 0
        while beta <= cfg.beta_max:
            aux = latent_g_step(gradient(latent), cfg.lambda0, beta)
            latent = latent_image_step(b, e, kernel, aux, beta, cfg.mu_exemplar)
            beta *= cfg.beta_growth
            rounds += 1
        kernel = kernel_step(latent, b, side, cfg)
        obj, data, count = hqs_objective(latent, b, e, kernel, aux, cfg)
        if not np.isfinite(obj):
            raise ValidationError("refinement diverged: non-finite objective")
        trace.append(TraceRow(outer, rounds, obj, data, count))

    state = LatentState(
        latent=latent,
        aux_grad=aux,
        kernel=kernel,
        beta=beta / cfg.beta_growth,
        objective_trace=trace,
    )
    return kernel, state


def write_trace(path, rows: list[TraceRow]) -> None:
    lines = ["outer_iter,beta_rounds,objective,data_term,l0_count"]
    for r in rows:
        lines.append(
            f"{r.outer_iter},{r.beta_rounds},{r.objective!r},{r.data_term!r},{r.l0_count}"
        )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
