"""Encoder-decoder subnets with explicit forward and backward passes.

Two identical U-shaped subnets are cascaded: the first maps a noisy
image to a clean blurry one, the second maps that to a sharp image.
All tensors use (batch, channels, height, width) layout.  Backward
passes are fully analytical; a forward pass returns the activation
tape its backward needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

LEAKY_SLOPE = 0.2
KSIZE = 3


@dataclass(frozen=True)
class NetArch:
    """Shape of one subnet; parameter tensor shapes follow from this."""

    levels: int = 2
    base_channels: int = 8
    in_channels: int = 1
    residual: bool = True

    def validate(self) -> "NetArch":
        if self.levels < 1:
            raise ValidationError(f"levels must be >= 1, got {self.levels}")
        if self.base_channels < 1:
            raise ValidationError(
                f"base_channels must be >= 1, got {self.base_channels}"
            )
        if self.in_channels not in (1, 3):
            raise ValidationError(
                f"in_channels must be 1 or 3, got {self.in_channels}"
            )
        return self

    def width(self, level: int) -> int:
        return self.base_channels * (2**level)


def _conv_forward(x, w, b, stride=1):
    """3x3 convolution, zero padding 1.  Returns (out, cache)."""
    bs, cin, h, wd = x.shape
    cout = w.shape[0]
    pad = 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - KSIZE) // stride + 1
    wo = (wd + 2 * pad - KSIZE) // stride + 1
    s = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        shape=(bs, cin, ho, wo, KSIZE, KSIZE),
        strides=(s[0], s[1], s[2] * stride, s[3] * stride, s[2], s[3]),
    )
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        bs, ho, wo, cin * KSIZE * KSIZE
    )
    out = cols @ w.reshape(cout, -1).T + b
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    cache = (cols, x.shape, stride)
    return out, cache


def _conv_backward(dout, w, cache):
    """Gradients of _conv_forward: returns (dw, db, dx)."""
    cols, xshape, stride = cache
    bs, cin, h, wd = xshape
    cout = w.shape[0]
    pad = 1
    ho, wo = dout.shape[2], dout.shape[3]
    dflat = np.ascontiguousarray(dout.transpose(0, 2, 3, 1))
    db = dflat.sum(axis=(0, 1, 2))
    dw = np.tensordot(dflat, cols, axes=([0, 1, 2], [0, 1, 2])).reshape(w.shape)
    dcols = (dflat @ w.reshape(cout, -1)).reshape(bs, ho, wo, cin, KSIZE, KSIZE)
    dcols = dcols.transpose(0, 3, 1, 2, 4, 5)
    dxp = np.zeros((bs, cin, h + 2 * pad, wd + 2 * pad), dtype=dout.dtype)
    for di in range(KSIZE):
        for dj in range(KSIZE):
            dxp[:, :, di : di + stride * ho : stride, dj : dj + stride * wo : stride] += dcols[
                :, :, :, :, di, dj
            ]
    dx = dxp[:, :, pad : pad + h, pad : pad + wd]
    return dw, db, dx


def _leaky_forward(z):
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def _leaky_backward(dout, z):
    return np.where(z > 0, dout, LEAKY_SLOPE * dout)


def _upsample2_forward(x):
    return x.repeat(2, axis=2).repeat(2, axis=3)


def _upsample2_backward(dout):
    bs, c, h2, w2 = dout.shape
    return dout.reshape(bs, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))


class UNet:
    """One subnet: conv pairs per level, strided downsampling, nearest
    upsampling, concatenated skips, linear output projection, optional
    input-residual output."""

    def __init__(self, arch: NetArch):
        self.arch = arch.validate()
        self.layer_names = self._declare()

    def _declare(self) -> list[str]:
        a = self.arch
        names = []
        for i in range(a.levels):
            names += [f"enc{i}.c1", f"enc{i}.c2", f"down{i}"]
        names += ["mid.c1", "mid.c2"]
        for i in reversed(range(a.levels)):
            names += [f"up{i}", f"dec{i}.c1", f"dec{i}.c2"]
        names.append("out")
        return names

    def layer_channels(self, name: str) -> tuple[int, int]:
        """(in_channels, out_channels) for a layer's conv."""
        a = self.arch
        kind, _, rest = name.partition(".")
        if name == "out":
            return a.width(0), a.in_channels
        if name in ("mid.c1", "mid.c2"):
            w = a.width(a.levels)
            return w, w
        i = int(kind[-1])
        if kind.startswith("enc"):
            w = a.width(i)
            if rest == "c1":
                return (a.in_channels if i == 0 else w, w)
            return w, w
        if kind.startswith("down"):
            return a.width(i), a.width(i + 1)
        if kind.startswith("up"):
            return a.width(i + 1), a.width(i)
        if kind.startswith("dec"):
            w = a.width(i)
            return (2 * w if rest == "c1" else w, w)
        raise KeyError(name)

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        for name in self.layer_names:
            cin, cout = self.layer_channels(name)
            shapes[f"{name}.w"] = (cout, cin, KSIZE, KSIZE)
            shapes[f"{name}.b"] = (cout,)
        return shapes

    def init_params(self, seed, dtype=np.float32) -> dict[str, np.ndarray]:
        """He fan-in initialization, biases zero, deterministic in seed."""
        rng = np.random.default_rng(seed)
        params = {}
        for name in self.layer_names:
            cin, cout = self.layer_channels(name)
            std = np.sqrt(2.0 / (cin * KSIZE * KSIZE))
            params[f"{name}.w"] = (
                rng.standard_normal((cout, cin, KSIZE, KSIZE)) * std
            ).astype(dtype)
            params[f"{name}.b"] = np.zeros(cout, dtype=dtype)
        return params

    def check_input(self, x: np.ndarray) -> None:
        if x.ndim != 4 or x.shape[1] != self.arch.in_channels:
            raise ValidationError(
                f"expected (B, {self.arch.in_channels}, H, W) input, got {x.shape}"
            )
        div = 2**self.arch.levels
        if x.shape[2] % div or x.shape[3] % div:
            raise ValidationError(
                f"spatial size {x.shape[2:]} not divisible by {div}"
            )

    def forward(self, params, x):
        """Run the subnet; returns (output, tape) with everything
        backward needs.  Activations are leaky-rectified except the
        final linear projection."""
        self.check_input(x)
        a = self.arch
        t = {"params_id": id(params), "x": x}
        skips = {}
        h = x

        def conv_act(name, h, stride=1):
            z, cache = _conv_forward(h, params[f"{name}.w"], params[f"{name}.b"], stride)
            t[name] = cache
            t[f"{name}.z"] = z
            return _leaky_forward(z)

        for i in range(a.levels):
            h = conv_act(f"enc{i}.c1", h)
            h = conv_act(f"enc{i}.c2", h)
            skips[i] = h
            h = conv_act(f"down{i}", h, stride=2)
        h = conv_act("mid.c1", h)
        h = conv_act("mid.c2", h)
        for i in reversed(range(a.levels)):
            h = _upsample2_forward(h)
            h = conv_act(f"up{i}", h)
            h = np.concatenate([skips[i], h], axis=1)
            h = conv_act(f"dec{i}.c1", h)
            h = conv_act(f"dec{i}.c2", h)
        pred, cache = _conv_forward(h, params["out.w"], params["out.b"])
        t["out"] = cache
        y = x + pred if a.residual else pred
        return y, t

    def backward(self, params, tape, dy):
        """Exact gradients of a forward pass.

        Returns (grads, dx): parameter gradients keyed like params and
        the gradient with respect to the subnet input (the cascade
        routes this into the upstream subnet).
        """
        if tape.get("params_id") != id(params):
            raise ValidationError("stale tape: built from different parameters")
        a = self.arch
        grads = {}

        def conv_act_back(name, dh):
            dz = _leaky_backward(dh, tape[f"{name}.z"])
            dw, db, dx = _conv_backward(dz, params[f"{name}.w"], tape[name])
            grads[f"{name}.w"] = dw
            grads[f"{name}.b"] = db
            return dx

        dw, db, dh = _conv_backward(dy, params["out.w"], tape["out"])
        grads["out.w"] = dw
        grads["out.b"] = db

        dskips = {}
        for i in range(a.levels):
            dh = conv_act_back(f"dec{i}.c2", dh)
            dh = conv_act_back(f"dec{i}.c1", dh)
            c_skip = a.width(i)
            dskips[i] = dh[:, :c_skip]
            dh = dh[:, c_skip:]
            dh = conv_act_back(f"up{i}", dh)
            dh = _upsample2_backward(dh)
        dh = conv_act_back("mid.c2", dh)
        dh = conv_act_back("mid.c1", dh)
        for i in reversed(range(a.levels)):
            dh = conv_act_back(f"down{i}", dh)
            dh = dh + dskips[i]
            dh = conv_act_back(f"enc{i}.c2", dh)
            dh = conv_act_back(f"enc{i}.c1", dh)
        dx = dh + dy if a.residual else dh
        return grads, dx


def to_batch(img: np.ndarray, dtype=np.float64) -> np.ndarray:
    """(H, W) or (H, W, C) image to a single-sample (1, C, H, W) batch."""
    img = np.asarray(img)
    if img.ndim == 2:
        return img[None, None].astype(dtype)
    return np.ascontiguousarray(img.transpose(2, 0, 1))[None].astype(dtype)


def from_batch(x: np.ndarray) -> np.ndarray:
    """Inverse of to_batch for a single-sample batch."""
    arr = np.asarray(x[0], dtype=np.float64)
    if arr.shape[0] == 1:
        return arr[0]
    return np.ascontiguousarray(arr.transpose(1, 2, 0))


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise ValidationError(f"shape mismatch {pred.shape} vs {target.shape}")
    d = pred.astype(np.float64) - target.astype(np.float64)
    return float(np.mean(d * d))


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Gradient of mse with respect to pred."""
    if pred.shape != target.shape:
        raise ValidationError(f"shape mismatch {pred.shape} vs {target.shape}")
    return (2.0 / pred.size) * (pred - target)


def loss_denoiser(b_hat: np.ndarray, b: np.ndarray) -> float:
    """Mean squared error of the denoiser output against clean blurry."""
    return mse(b_hat, b)


def loss_deblurring(i_hat: np.ndarray, i: np.ndarray) -> float:
    """Mean squared error of the deblurring output against sharp."""
    return mse(i_hat, i)


JOINT_SHARP_WEIGHT = 0.5


def loss_joint(b1: np.ndarray, b: np.ndarray, i1: np.ndarray, i: np.ndarray) -> float:
    """Joint objective: denoise error plus half-weighted sharp error."""
    return loss_denoiser(b1, b) + JOINT_SHARP_WEIGHT * loss_denoiser(i1, i)
