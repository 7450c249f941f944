"""Metric harness: run the cascade over a manifest and aggregate scores.

Per sample it reports PSNR of the noisy input, the denoised estimate,
and the sharp estimate, plus SSIM of the sharp estimate and (when
requested and a reference kernel is on disk) kernel similarity of a
re-estimated blur kernel.  Rows aggregate into per-noise-level means
and one pooled mean.

Reporting choices surfaced in the text summary:
  * PSNR pools squared error over all channels before the log.
  * SSIM appears per noise level and pooled; the pooled figure is the
    one comparable to single-column SSIM tables.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ValidationError
from .fileio import read_png, read_psf_text
from .metrics import kernel_similarity, psnr, ssim
from .psfest import HqsConfig, estimate_psf_exemplar, fft_deconv
from .synthesis import read_manifest
from .training import Checkpoint, infer

PSF_METHODS = ("none", "fft", "exemplar")


class SampleRow(NamedTuple):
    id: str
    sigma: float
    psnr_noisy: float | None
    psnr_denoised: float | None
    psnr_sharp: float | None
    ssim_sharp: float | None
    ks: float | None
    status: str  # "ok" or "failed"
    note: str


class GroupStats(NamedTuple):
    label: str  # "sigma=10" style, or "all"
    count: int
    psnr_noisy: float
    psnr_denoised: float
    psnr_sharp: float
    ssim_sharp: float
    ks: float | None


@dataclass
class EvalReport:
    rows: list[SampleRow]
    groups: list[GroupStats]
    pooled: GroupStats
    failed: list[SampleRow] = field(default_factory=list)

    def to_csv(self) -> str:
        def cell(v):
            return "" if v is None else repr(v)

        lines = ["id,sigma,psnr_noisy,psnr_denoised,psnr_sharp,ssim_sharp,ks,status"]
        for r in self.rows:
            lines.append(
                ",".join(
                    [
                        r.id,
                        f"{r.sigma:g}",
                        cell(r.psnr_noisy),
                        cell(r.psnr_denoised),
                        cell(r.psnr_sharp),
                        cell(r.ssim_sharp),
                        cell(r.ks),
                        r.status,
                    ]
                )
            )
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        def fmt(v, width=10):
            return f"{'-':>{width}}" if v is None else f"{v:>{width}.4f}"

        out = ["evaluation summary", ""]
        header = (
            f"{'group':<12}{'n':>5}{'psnr_noisy':>12}{'psnr_den':>12}"
            f"{'psnr_sharp':>12}{'ssim_sharp':>12}{'ks':>10}"
        )
        out.append(header)
        out.append("-" * len(header))
        for g in [*self.groups, self.pooled]:
            out.append(
                f"{g.label:<12}{g.count:>5}"
                f"{fmt(g.psnr_noisy, 12)}{fmt(g.psnr_denoised, 12)}"
                f"{fmt(g.psnr_sharp, 12)}{fmt(g.ssim_sharp, 12)}{fmt(g.ks, 10)}"
            )
        out.append("")
        out.append("psnr pools squared error over all channels before the log.")
        out.append(
            "pooled ssim (row 'all') is the figure comparable to "
            "single-column tables; per-sigma rows are a breakdown."
        )
        if self.failed:
            out.append("")
            out.append(f"failed samples ({len(self.failed)}):")
            for r in self.failed:
                out.append(f"  {r.id}: {r.note}")
        return "\n".join(out) + "\n"


def _eval_one(root, row, ckpt: Checkpoint, psf_method: str, hqs: HqsConfig):
    try:
        sharp = read_png(os.path.join(root, row.sharp))
        blurry = read_png(os.path.join(root, row.blurry))
        noisy = read_png(os.path.join(root, row.noisy))
        denoised, sharp_hat = infer(ckpt, noisy)
        denoised = np.clip(denoised, 0.0, 1.0)
        sharp_hat = np.clip(sharp_hat, 0.0, 1.0)
        ks = None
        if psf_method != "none" and row.psf:
            ref = read_psf_text(os.path.join(root, row.psf))
            side = ref.shape[0]
            if psf_method == "fft":
                est = fft_deconv(denoised, sharp_hat, side, hqs.epsilon_wiener)
            else:
                est, _ = estimate_psf_exemplar(denoised, sharp_hat, side, hqs)
            ks = kernel_similarity(est, ref)
        return SampleRow(
            id=row.id,
            sigma=row.sigma,
            psnr_noisy=psnr(noisy, sharp),
            psnr_denoised=psnr(denoised, blurry),
            psnr_sharp=psnr(sharp_hat, sharp),
            ssim_sharp=ssim(sharp_hat, sharp),
            ks=ks,
            status="ok",
            note="",
        )
    except (ValidationError, OSError) as exc:
        return SampleRow(row.id, row.sigma, None, None, None, None, None,
                         "failed", str(exc))


def _group(label: str, rows: list[SampleRow]) -> GroupStats:
    def mean(attr):
        return float(np.mean([getattr(r, attr) for r in rows]))

    ks_vals = [r.ks for r in rows if r.ks is not None]
    return GroupStats(
        label=label,
        count=len(rows),
        psnr_noisy=mean("psnr_noisy"),
        psnr_denoised=mean("psnr_denoised"),
        psnr_sharp=mean("psnr_sharp"),
        ssim_sharp=mean("ssim_sharp"),
        ks=float(np.mean(ks_vals)) if ks_vals else None,
    )


def evaluate(
    manifest_path,
    ckpt: Checkpoint,
    *,
    psf_method: str = "none",
    hqs: HqsConfig | None = None,
    workers: int = 1,
) -> EvalReport:
    """Score every manifest sample with the checkpointed cascade.

    Samples evaluate independently (thread pool when workers > 1) and
    assemble in id order, so the report is deterministic.  Unreadable
    samples become failed rows, excluded from the aggregates.
    """
    if psf_method not in PSF_METHODS:
        raise ValidationError(
            f"psf_method must be one of {PSF_METHODS}, got {psf_method!r}"
        )
    if workers < 1:
        raise ValidationError(f"workers must be >= 1, got {workers}")
    hqs = (hqs or HqsConfig()).validate()
    mrows = read_manifest(manifest_path)
    if not mrows:
        raise ValidationError(f"{manifest_path}: empty manifest")
    mrows = sorted(mrows, key=lambda r: r.id)
    root = os.path.dirname(os.fspath(manifest_path))

    if workers == 1:
        rows = [_eval_one(root, m, ckpt, psf_method, hqs) for m in mrows]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(
                pool.map(lambda m: _eval_one(root, m, ckpt, psf_method, hqs), mrows)
            )

    ok = [r for r in rows if r.status == "ok"]
    failed = [r for r in rows if r.status != "ok"]
    if not ok:
        raise ValidationError("evaluate: every sample failed")
    groups = [
        _group(f"sigma={s:g}", [r for r in ok if r.sigma == s])
        for s in sorted({r.sigma for r in ok})
    ]
    return EvalReport(rows=rows, groups=groups, pooled=_group("all", ok),
                      failed=failed)


def write_report(report: EvalReport, out_dir) -> tuple[str, str]:
    """Write report.csv and report.txt under out_dir; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(os.fspath(out_dir), "report.csv")
    txt_path = os.path.join(os.fspath(out_dir), "report.txt")
    with open(csv_path, "w", newline="\n") as fh:
        fh.write(report.to_csv())
    with open(txt_path, "w", newline="\n") as fh:
        fh.write(report.to_text())
    return csv_path, txt_path
