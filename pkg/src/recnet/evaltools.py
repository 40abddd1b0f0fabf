"""Evaluation utilities: paired metric reports, the input/output brightness
mapping diagnostic, and mask visualization grids."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from recnet.data import luma, save_image
from recnet.metrics import psnr, ssim

CURVE_BINS = 64


@dataclass
class CurveReport:
    """Per-luma-bin mapping statistics and the deviation-from-identity area.

    Each row: (bin index, lo, hi, count, median_in, median_out, q25, q75).
    Empty bins are recorded with count 0 and NaN statistics. The area sums
    |median_out - median_in| over non-empty bins, weighted by bin width, so
    identical pair sets score exactly 0 and larger values mean larger
    brightness-mapping error.
    """

    rows: list = field(repr=False)
    area: float
    bins: int = CURVE_BINS


def brightness_mapping_curve(pairs, bins: int = CURVE_BINS) -> CurveReport:
    """Distribution of output luma conditioned on binned input luma.

    ``pairs`` is an iterable of (img_a, img_b) tensors, (3, H, W) or
    (B, 3, H, W); img_a provides the binning axis.
    """
    lum_a, lum_b = [], []
    for a, b in pairs:
        lum_a.append(luma(a).reshape(-1).numpy())
        lum_b.append(luma(b).reshape(-1).numpy())
    if not lum_a:
        raise ValueError("no pairs given")
    x = np.concatenate(lum_a)
    y = np.concatenate(lum_b)

    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.digitize(x, edges) - 1, 0, bins - 1)
    rows, area = [], 0.0
    for j in range(bins):
        sel = idx == j
        count = int(sel.sum())
        if count == 0:
            rows.append((j, edges[j], edges[j + 1], 0,
                         float("nan"), float("nan"), float("nan"), float("nan")))
            continue
        med_in = float(np.median(x[sel]))
        med_out = float(np.median(y[sel]))
        q25, q75 = (float(q) for q in np.percentile(y[sel], [25, 75]))
        rows.append((j, edges[j], edges[j + 1], count, med_in, med_out, q25, q75))
        area += abs(med_out - med_in) / bins
    return CurveReport(rows=rows, area=area, bins=bins)


def write_curve_csv(report: CurveReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "lo", "hi", "count", "median_in", "median_out",
                         "q25", "q75"])
        writer.writerows(report.rows)


def plot_curve(report: CurveReport, path, title: str = "brightness mapping") -> None:
    """Render median curve + IQR band against the identity diagonal."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    filled = [r for r in report.rows if r[3] > 0]
    med_in = [r[4] for r in filled]
    med_out = [r[5] for r in filled]
    q25 = [r[6] for r in filled]
    q75 = [r[7] for r in filled]

    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot([0, 1], [0, 1], "k--", linewidth=1, label="identity")
    ax.fill_between(med_in, q25, q75, alpha=0.3, label="IQR")
    ax.plot(med_in, med_out, linewidth=1.5, label="median")
    ax.set_xlabel("input luma")
    ax.set_ylabel("output luma")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_title(f"{title} (area {report.area:.4f})")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


@dataclass
class MetricReport:
    """Per-image PSNR/SSIM plus dataset means."""

    names: list
    psnr_values: list
    ssim_values: list

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_values))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_values))


def evaluate_pairs(dataset) -> MetricReport:
    """Compute PSNR/SSIM of every pair's input against its ground truth."""
    names, psnrs, ssims = [], [], []
    for sample in dataset:
        a = sample.input.unsqueeze(0)
        b = sample.gt.unsqueeze(0)
        names.append(sample.id)
        psnrs.append(psnr(a, b))
        ssims.append(ssim(a, b))
    return MetricReport(names=names, psnr_values=psnrs, ssim_values=ssims)


def write_metric_report(report: MetricReport, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "psnr", "ssim"])
        for name, p, s in zip(report.names, report.psnr_values, report.ssim_values):
            writer.writerow([name, f"{p:.4f}", f"{s:.6f}"])
    with open(out_dir / "summary.txt", "w") as fh:
        fh.write(f"images: {len(report.names)}\n")
        fh.write(f"mean_psnr: {report.mean_psnr:.4f}\n")
        fh.write(f"mean_ssim: {report.mean_ssim:.6f}\n")


def _to_uint8_rgb(img: torch.Tensor) -> np.ndarray:
    arr = img.detach().clamp(0, 1).cpu().numpy()
    if arr.shape[0] == 1:
        arr = np.repeat(arr, 3, axis=0)
    return (arr.transpose(1, 2, 0) * 255.0).round().astype(np.uint8)


def visualize_masks(model, img: torch.Tensor, gt: torch.Tensor | None = None,
                    path=None) -> np.ndarray:
    """Side-by-side grid: input, each block's predicted mask, gt mask.

    ``img`` is a single (3, H, W) image. Returns the uint8 grid and writes
    it as PNG when ``path`` is given.
    """
    with torch.no_grad():
        _, masks = model(img.unsqueeze(0))
    panels = [_to_uint8_rgb(img)]
    panels += [_to_uint8_rgb(m[0]) for m in masks]
    if gt is not None:
        from recnet.losses import compute_gt_mask

        m_gt = compute_gt_mask(img.unsqueeze(0), gt.unsqueeze(0))
        panels.append(_to_uint8_rgb(1.0 - m_gt[0]))  # underexposure polarity
    grid = np.concatenate(panels, axis=1)
    if path is not None:
        save_image(torch.from_numpy(grid.transpose(2, 0, 1)).float() / 255.0, path)
    return grid
