"""Blind deblurring of noisy images.

A denoise-then-deblur cascade of small convolutional networks trained
with a joint loss, a synthetic degradation pipeline (random-walk blur
kernels plus Gaussian noise), closed-form and alternating blur-kernel
estimators, and a PSNR/SSIM/kernel-similarity evaluation harness.
"""

from .errors import ValidationError
from .imaging import (
    GradientField,
    check_image,
    check_psf,
    convolve,
    delta_psf,
    fft_convolve,
    gradient,
    gradient_adjoint,
    luminance,
    normalize_psf,
    psf2otf,
)
from .metrics import kernel_similarity, psnr, ssim
from .network import NetArch, UNet, loss_deblurring, loss_denoiser, loss_joint
from .psfest import HqsConfig, estimate_psf_exemplar, fft_deconv
from .synthesis import NoiseSpec, WalkParams, add_noise, blur, build_dataset, random_walk_psf
from .training import Checkpoint, TrainConfig, infer, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "GradientField",
    "HqsConfig",
    "NetArch",
    "NoiseSpec",
    "TrainConfig",
    "UNet",
    "ValidationError",
    "WalkParams",
    "add_noise",
    "blur",
    "build_dataset",
    "check_image",
    "check_psf",
    "convolve",
    "delta_psf",
    "estimate_psf_exemplar",
    "fft_convolve",
    "fft_deconv",
    "gradient",
    "gradient_adjoint",
    "infer",
    "kernel_similarity",
    "load_checkpoint",
    "loss_deblurring",
    "loss_denoiser",
    "loss_joint",
    "luminance",
    "normalize_psf",
    "psf2otf",
    "psnr",
    "random_walk_psf",
    "save_checkpoint",
    "ssim",
    "train",
]
