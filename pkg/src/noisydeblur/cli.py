"""Command-line front end: synth / train / infer / estimate-psf / eval.

Exit codes: 0 success, 1 invalid input or flags, 2 runtime failure.
Every stochastic subcommand takes an explicit --seed, and identical
inputs plus seed reproduce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import apply_overrides, dump_config, load_config
from .errors import ValidationError
from .evaluate import PSF_METHODS, evaluate, write_report
from .fileio import read_png, write_png, write_psf_text
from .imaging import luminance
from .network import NetArch
from .psfest import HqsConfig, estimate_psf_exemplar, fft_deconv, write_trace
from .synthesis import build_dataset, read_manifest
from .training import (
    STAGES,
    TrainConfig,
    infer,
    load_checkpoint,
    save_checkpoint,
    train,
)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON config document")
    p.add_argument(
        "--set",
        metavar="KEY=VALUE",
        action="append",
        default=[],
        dest="overrides",
        help="override one config scalar, e.g. --set hqs.lambda0=0.01",
    )
    p.add_argument(
        "--dump-config",
        metavar="PATH",
        help="write the effective config for this run and continue",
    )


def _effective_config(args) -> dict:
    return apply_overrides(load_config(args.config), args.overrides)


def _maybe_dump(args, cfg: dict) -> None:
    if args.dump_config:
        with open(args.dump_config, "w", newline="\n") as fh:
            fh.write(dump_config(cfg))


def _hqs_from(cfg: dict) -> HqsConfig:
    return HqsConfig(**cfg["hqs"]).validate()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisydeblur",
        description="Blind deblurring of noisy images: dataset synthesis, "
        "cascade training, inference, blur-kernel estimation, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="degrade sharp images into a training set")
    p.add_argument("--sharp-dir", required=True, help="directory of sharp PNGs")
    p.add_argument("--out-dir", required=True, help="dataset output directory")
    p.add_argument("--count", type=int, help="samples to produce")
    p.add_argument("--size", type=int, help="square resize target")
    p.add_argument("--seed", type=int, default=0, help="dataset seed")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--manifest", required=True, help="dataset manifest.csv")
    p.add_argument("--stage", required=True, choices=STAGES)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--lr", type=float, help="learning rate (stage default if omitted)")
    p.add_argument("--batch", type=int, help="batch size (config default 16)")
    p.add_argument("--seed", type=int, default=0, help="init and shuffle seed")
    p.add_argument("--init", help="checkpoint to start from")
    p.add_argument(
        "--init2", help="second checkpoint supplying the deblur net's weights"
    )
    p.add_argument("--out", required=True, help="checkpoint output path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run the cascade on one noisy image")
    p.add_argument("--ckpt", required=True, help="trained checkpoint")
    p.add_argument("--in", dest="input", required=True, metavar="NOISY_PNG")
    p.add_argument("--out-denoised", required=True, metavar="PNG")
    p.add_argument("--out-sharp", required=True, metavar="PNG")
    _add_config_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("estimate-psf", help="recover the blur kernel")
    p.add_argument("--denoised", required=True, metavar="B1_PNG")
    p.add_argument("--sharp", required=True, metavar="I1_PNG")
    p.add_argument("--side", type=int, required=True, help="odd kernel side")
    p.add_argument("--method", choices=("fft", "exemplar"), default="exemplar")
    p.add_argument("--out", required=True, help="kernel text output")
    p.add_argument("--trace", help="objective trace CSV (exemplar method)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_estimate_psf)

    p = sub.add_parser("eval", help="score a checkpoint over a manifest")
    p.add_argument("--manifest", required=True, help="dataset manifest.csv")
    p.add_argument("--ckpt", required=True, help="trained checkpoint")
    p.add_argument("--out-dir", required=True, help="report output directory")
    p.add_argument("--psf-method", choices=PSF_METHODS,
                   help="per-sample kernel re-estimation for the ks column")
    p.add_argument("--workers", type=int, help="parallel sample workers")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    return parser


def cmd_synth(args) -> int:
    cfg = _effective_config(args)
    s = cfg["synth"]
    if args.count is not None:
        s["count"] = args.count
    if args.size is not None:
        s["size"] = args.size
    _maybe_dump(args, cfg)
    rows = build_dataset(
        args.sharp_dir,
        args.out_dir,
        count=s["count"],
        seed=args.seed,
        size=s["size"],
        channels=s["channels"],
        l_min=s["l_min"],
        l_max=s["l_max"],
        steps=s["steps"],
        inertia=s["inertia"],
        jitter=s["jitter"],
    )
    print(f"wrote {len(rows)} samples to {args.out_dir}")
    return 0


def _peek_channels(manifest_path) -> int:
    rows = read_manifest(manifest_path)
    root = os.path.dirname(os.fspath(manifest_path))
    img = read_png(os.path.join(root, rows[0].blurry))
    return 1 if img.ndim == 2 else img.shape[2]


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    if args.batch is not None:
        cfg["train"]["batch_size"] = args.batch
    _maybe_dump(args, cfg)
    init = load_checkpoint(args.init) if args.init else None
    init2 = load_checkpoint(args.init2) if args.init2 else None
    if init is not None:
        arch = init.arch
    else:
        net = cfg["network"]
        arch = NetArch(
            levels=net["levels"],
            base_channels=net["base_channels"],
            in_channels=_peek_channels(args.manifest),
            residual=net["residual"],
        )
    tc = TrainConfig(
        stage=args.stage,
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=cfg["train"]["batch_size"],
        seed=args.seed,
        precision=cfg["train"]["precision"],
    )
    ckpt, history = train(args.manifest, arch, tc, init=init, init2=init2)
    for i, h in enumerate(history):
        print(f"epoch {i + 1}/{len(history)} loss {h['total']:.6g}")
    save_checkpoint(args.out, ckpt)
    print(f"wrote checkpoint {args.out}")
    return 0


def cmd_infer(args) -> int:
    cfg = _effective_config(args)
    _maybe_dump(args, cfg)
    ckpt = load_checkpoint(args.ckpt)
    noisy = read_png(args.input)
    if ckpt.arch.in_channels == 1 and noisy.ndim == 3:
        noisy = luminance(noisy)
    denoised, sharp = infer(ckpt, noisy)
    write_png(args.out_denoised, np.clip(denoised, 0.0, 1.0))
    write_png(args.out_sharp, np.clip(sharp, 0.0, 1.0))
    print(f"wrote {args.out_denoised} and {args.out_sharp}")
    return 0


def cmd_estimate_psf(args) -> int:
    cfg = _effective_config(args)
    _maybe_dump(args, cfg)
    hqs = _hqs_from(cfg)
    b1 = read_png(args.denoised)
    i1 = read_png(args.sharp)
    if args.method == "fft":
        kernel = fft_deconv(b1, i1, args.side, hqs.epsilon_wiener)
        trace_rows = []
    else:
        kernel, state = estimate_psf_exemplar(b1, i1, args.side, hqs)
        trace_rows = state.objective_trace
    write_psf_text(args.out, kernel)
    if args.trace:
        write_trace(args.trace, trace_rows)
    print(f"wrote kernel {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _effective_config(args)
    if args.psf_method is not None:
        cfg["eval"]["psf_method"] = args.psf_method
    if args.workers is not None:
        cfg["eval"]["workers"] = args.workers
    _maybe_dump(args, cfg)
    ckpt = load_checkpoint(args.ckpt)
    report = evaluate(
        args.manifest,
        ckpt,
        psf_method=cfg["eval"]["psf_method"],
        hqs=_hqs_from(cfg),
        workers=cfg["eval"]["workers"],
    )
    csv_path, txt_path = write_report(report, args.out_dir)
    pooled = report.pooled
    print(
        f"evaluated {pooled.count} samples: psnr_sharp {pooled.psnr_sharp:.4f} dB, "
        f"ssim_sharp {pooled.ssim_sharp:.4f}"
        + (f", {len(report.failed)} failed" if report.failed else "")
    )
    print(f"wrote {csv_path} and {txt_path}")
    return 0


def cli_dispatch(argv=None) -> int:
    """Parse argv and run the chosen subcommand; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        raise
    except Exception as exc:  # anything past validation is a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    return cli_dispatch(argv)


if __name__ == "__main__":
    sys.exit(main())
