"""Optimization and the three-stage training protocol.

Stages: pretrain the denoiser on (noisy, blurry) pairs, pretrain the
deblurring subnet on (blurry, sharp) pairs, then fine-tune both
together on the joint objective so deblurring gradients reach the
denoiser through the cascade.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .fileio import read_png
from .network import (
    JOINT_SHARP_WEIGHT,
    NetArch,
    UNet,
    from_batch,
    mse,
    mse_grad,
    to_batch,
)
from .synthesis import ManifestRow, read_manifest, regenerate_noise

STAGES = ("pretrain-denoise", "pretrain-deblur", "joint")

CHECKPOINT_MAGIC = "NDBLUR1"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    stage: str
    epochs: int
    learning_rate: float | None = None  # None: 1e-4 pretrain, 1e-5 joint
    batch_size: int = 16
    seed: int = 0
    precision: int = 32

    def validate(self) -> "TrainConfig":
        if self.stage not in STAGES:
            raise ValidationError(f"unknown stage {self.stage!r}")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValidationError(f"learning rate must be > 0")
        if self.batch_size < 1:
            raise ValidationError(f"batch size must be >= 1, got {self.batch_size}")
        if self.precision not in (32, 64):
            raise ValidationError(f"precision must be 32 or 64, got {self.precision}")
        return self

    @property
    def lr(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return 1e-5 if self.stage == "joint" else 1e-4

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64


@dataclass
class AdamState:
    """First/second moment estimates and step counter for one subnet."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_init(params: dict) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
        t=0,
    )


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    if set(params) != set(grads):
        raise ValidationError("adam_step: params and grads keys differ")
    t = state.t + 1
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValidationError(f"adam_step: shape mismatch for {k}")
        m = ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * (g * g)
        step = lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        new_p[k] = (p - step).astype(p.dtype)
        new_m[k] = m
        new_v[k] = v
    return new_p, AdamState(m=new_m, v=new_v, t=t)


@dataclass
class Checkpoint:
    arch: NetArch
    stage: str
    epoch: int
    losses: dict
    net1: dict
    net2: dict


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    """Write the textual header and the float32 little-endian payload.

    Tensor order: net1 then net2, each in the subnet's declaration
    order, weight before bias per layer.
    """
    net = UNet(ckpt.arch)
    header = [
        CHECKPOINT_MAGIC,
        f"levels {ckpt.arch.levels}",
        f"base_channels {ckpt.arch.base_channels}",
        f"in_channels {ckpt.arch.in_channels}",
        f"residual {int(ckpt.arch.residual)}",
        f"stage {ckpt.stage}",
        f"epoch {ckpt.epoch}",
    ]
    for k in sorted(ckpt.losses):
        header.append(f"loss_{k} {ckpt.losses[k]!r}")
    blob = bytearray()
    for params in (ckpt.net1, ckpt.net2):
        for name in net.param_shapes():
            blob += np.ascontiguousarray(
                params[name], dtype="<f4"
            ).tobytes()
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n\n").encode("ascii"))
        fh.write(bytes(blob))


def load_checkpoint(path: str | os.PathLike, precision: int = 32) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    sep = data.find(b"\n\n")
    if sep < 0:
        raise ValidationError(f"{path}: missing header terminator")
    lines = data[:sep].decode("ascii", errors="replace").split("\n")
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValidationError(f"{path}: bad magic")
    fields = {}
    for ln in lines[1:]:
        key, _, val = ln.partition(" ")
        fields[key] = val
    try:
        arch = NetArch(
            levels=int(fields["levels"]),
            base_channels=int(fields["base_channels"]),
            in_channels=int(fields["in_channels"]),
            residual=bool(int(fields["residual"])),
        ).validate()
        stage = fields["stage"]
        epoch = int(fields["epoch"])
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path}: bad header: {exc}") from exc
    losses = {
        k[len("loss_"):]: float(v) for k, v in fields.items() if k.startswith("loss_")
    }

    net = UNet(arch)
    shapes = net.param_shapes()
    per_net = sum(int(np.prod(s)) for s in shapes.values())
    payload = data[sep + 2 :]
    if len(payload) != 2 * per_net * 4:
        raise ValidationError(
            f"{path}: payload is {len(payload)} bytes, expected {2 * per_net * 4}"
        )
    dtype = np.float32 if precision == 32 else np.float64
    flat = np.frombuffer(payload, dtype="<f4")
    nets = []
    off = 0
    for _ in range(2):
        params = {}
        for name, shape in shapes.items():
            n = int(np.prod(shape))
            params[name] = flat[off : off + n].reshape(shape).astype(dtype)
            off += n
        nets.append(params)
    return Checkpoint(arch=arch, stage=stage, epoch=epoch, losses=losses,
                      net1=nets[0], net2=nets[1])


def _load_training_arrays(manifest_path, arch: NetArch, dtype):
    """Stacked (N, B, I) arrays for all manifest rows.

    The noisy input is regenerated unclamped from the recorded seed;
    blurry and sharp come from the stored PNGs.
    """
    rows = read_manifest(manifest_path)
    base = os.path.dirname(os.fspath(manifest_path))
    noisy, blurry, sharp = [], [], []
    for row in rows:
        b = read_png(os.path.join(base, row.blurry))
        i = read_png(os.path.join(base, row.sharp))
        n = regenerate_noise(b, row.sigma, row.seed)
        noisy.append(to_batch(n, dtype)[0])
        blurry.append(to_batch(b, dtype)[0])
        sharp.append(to_batch(i, dtype)[0])
    n_arr = np.stack(noisy)
    b_arr = np.stack(blurry)
    i_arr = np.stack(sharp)
    if n_arr.shape[1] != arch.in_channels:
        raise ValidationError(
            f"manifest images have {n_arr.shape[1]} channel(s), "
            f"arch expects {arch.in_channels}"
        )
    div = 2**arch.levels
    if n_arr.shape[2] % div or n_arr.shape[3] % div:
        raise ValidationError(
            f"image size {n_arr.shape[2:]} not divisible by 2^levels={div}"
        )
    return n_arr, b_arr, i_arr


def train(
    manifest_path,
    arch: NetArch,
    config: TrainConfig,
    init: Checkpoint | None = None,
    init2: Checkpoint | None = None,
):
    """Run one training stage; returns (Checkpoint, per-epoch loss history).

    Determinism: shuffling comes from (seed, epoch), batches run
    serially, so identical inputs give bit-identical checkpoints.
    """
    arch = arch.validate()
    config = config.validate()
    dtype = config.dtype

    def subnet_params(which: int):
        src = init2 if (which == 2 and init2 is not None) else init
        if src is not None:
            params = src.net1 if which == 1 else src.net2
            return {k: v.astype(dtype) for k, v in params.items()}
        return UNet(arch).init_params([config.seed, which], dtype)

    if init is not None and init.arch != arch:
        raise ValidationError("init checkpoint arch differs from requested arch")
    if init2 is not None and init2.arch != arch:
        raise ValidationError("init2 checkpoint arch differs from requested arch")
    if config.stage == "joint" and init is None:
        raise ValidationError("joint stage requires pretrained checkpoints (init)")

    net = UNet(arch)
    p1 = subnet_params(1)
    p2 = subnet_params(2)

    n_arr, b_arr, i_arr = _load_training_arrays(manifest_path, arch, dtype)
    n_samples = n_arr.shape[0]

    s1 = adam_init(p1)
    s2 = adam_init(p2)
    history = []
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, 7, epoch]).permutation(n_samples)
        totals = {"total": 0.0, "denoise": 0.0, "deblur": 0.0}
        for start in range(0, n_samples, config.batch_size):
            idx = order[start : start + config.batch_size]
            kb = len(idx) / n_samples
            if config.stage == "pretrain-denoise":
                y, tape = net.forward(p1, n_arr[idx])
                loss = mse(y, b_arr[idx])
                g1, _ = net.backward(p1, tape, mse_grad(y, b_arr[idx]).astype(dtype))
                p1, s1 = adam_step(p1, g1, s1, config.lr)
                totals["total"] += loss * kb
            elif config.stage == "pretrain-deblur":
                y, tape = net.forward(p2, b_arr[idx])
                loss = mse(y, i_arr[idx])
                g2, _ = net.backward(p2, tape, mse_grad(y, i_arr[idx]).astype(dtype))
                p2, s2 = adam_step(p2, g2, s2, config.lr)
                totals["total"] += loss * kb
            else:
                b1, tape1 = net.forward(p1, n_arr[idx])
                i1, tape2 = net.forward(p2, b1)
                l_den = mse(b1, b_arr[idx])
                l_deb = mse(i1, i_arr[idx])
                d_i1 = (JOINT_SHARP_WEIGHT * mse_grad(i1, i_arr[idx])).astype(dtype)
                g2, d_b1 = net.backward(p2, tape2, d_i1)
                d_b1 = d_b1 + mse_grad(b1, b_arr[idx]).astype(dtype)
                g1, _ = net.backward(p1, tape1, d_b1)
                p1, s1 = adam_step(p1, g1, s1, config.lr)
                p2, s2 = adam_step(p2, g2, s2, config.lr)
                totals["total"] += (l_den + JOINT_SHARP_WEIGHT * l_deb) * kb
                totals["denoise"] += l_den * kb
                totals["deblur"] += l_deb * kb
        history.append(dict(totals))

    losses = dict(history[-1]) if history else {}
    if config.stage != "joint":
        losses.pop("denoise", None)
        losses.pop("deblur", None)
    ckpt = Checkpoint(
        arch=arch,
        stage=config.stage,
        epoch=config.epochs,
        losses=losses,
        net1=p1,
        net2=p2,
    )
    return ckpt, history


def infer(ckpt: Checkpoint, noisy: np.ndarray):
    """Run the cascade on one image; returns (denoised, sharp) unclamped."""
    net = UNet(ckpt.arch)
    x = to_batch(noisy, dtype=np.float64)
    p1 = {k: v.astype(np.float64) for k, v in ckpt.net1.items()}
    p2 = {k: v.astype(np.float64) for k, v in ckpt.net2.items()}
    b1, _ = net.forward(p1, x)
    i1, _ = net.forward(p2, b1)
    return from_batch(b1), from_batch(i1)
