"""Report rendering: delimited metrics plus matplotlib figures.

Everything here is presentation; numbers are computed elsewhere and
arrive as plain dicts (metrics reports, training records).
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import DataError


def write_metrics_csv(path, metrics: dict):
    per = metrics.get("per_channel", [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slice", "direction", "psnr_db", "ssim", "nrmse"])
        for row in per:
            writer.writerow([
                row["slice"], row["direction"],
                f"{row['psnr_db']:.6f}", f"{row['ssim']:.6f}", f"{row['nrmse']:.6f}",
            ])
        writer.writerow([
            "all", "all",
            f"{metrics['psnr_db']:.6f}", f"{metrics['ssim']:.6f}",
            f"{metrics['nrmse']:.6f}",
        ])


def _channel_grid(per: list, key: str) -> np.ndarray:
    zs = sorted({row["slice"] for row in per})
    ns = sorted({row["direction"] for row in per})
    grid = np.full((len(zs), len(ns)), np.nan)
    zi = {z: i for i, z in enumerate(zs)}
    ni = {n: i for i, n in enumerate(ns)}
    for row in per:
        grid[zi[row["slice"]], ni[row["direction"]]] = row[key]
    return grid


def channel_figure(path, metrics: dict):
    per = metrics.get("per_channel")
    if not per:
        raise DataError("metrics report has no per-channel rows to plot")
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2), constrained_layout=True)
    for ax, key, label in zip(
        axes, ("psnr_db", "ssim", "nrmse"), ("PSNR (dB)", "SSIM", "NRMSE")
    ):
        grid = _channel_grid(per, key)
        im = ax.imshow(grid, aspect="auto", interpolation="nearest")
        ax.set_title(f"{label}, mean {metrics[key]:.4g}")
        ax.set_xlabel("direction")
        ax.set_ylabel("slice")
        fig.colorbar(im, ax=ax, shrink=0.85)
    fig.savefig(path, dpi=110)
    plt.close(fig)


def training_figure(path, record: dict):
    loss = record.get("epoch_loss")
    if not loss:
        raise DataError("training record has no epoch losses to plot")
    fig, ax = plt.subplots(figsize=(7, 3.6), constrained_layout=True)
    epochs = np.arange(1, len(loss) + 1)
    ax.plot(epochs, loss, color="tab:blue", label="train loss")
    if record.get("epoch_detail") and any(v > 0 for v in record["epoch_detail"]):
        ax.plot(epochs, record["epoch_detail"], color="tab:cyan",
                linestyle="--", label="detail term")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(loc="upper left")
    vp = record.get("val_psnr")
    if vp:
        ax2 = ax.twinx()
        ax2.plot(epochs[: len(vp)], vp, color="tab:orange", label="val PSNR")
        ax2.set_ylabel("val PSNR (dB)")
        ax2.legend(loc="upper right")
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_report(out_dir, metrics: dict | None = None, record: dict | None = None):
    """Write report.csv and figures into out_dir; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if metrics is None and record is None:
        raise DataError("nothing to report: need metrics and/or a training record")
    if metrics is not None:
        csv_path = out_dir / "report.csv"
        write_metrics_csv(csv_path, metrics)
        written.append(csv_path)
        if metrics.get("per_channel"):
            fig_path = out_dir / "fig_channels.png"
            channel_figure(fig_path, metrics)
            written.append(fig_path)
    if record is not None:
        fig_path = out_dir / "fig_training.png"
        training_figure(fig_path, record)
        written.append(fig_path)
    return written
