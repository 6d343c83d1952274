"""MSE / PSNR / SSIM metrics with per-step curve emission.

SSIM uses the canonical configuration: 11x11 Gaussian window with
sigma 1.5, weighted (not sample) moments, stability constants
``(0.01 * peak)^2`` and ``(0.03 * peak)^2``, averaged over the valid
window positions. PSNR is capped at 100 dB for exact matches.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from .errors import ShapeMismatchError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5

CURVE_HEADER = (
    "step", "mse_mean", "mse_std", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std"
)


def _to_numpy(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.detach().cpu().numpy().astype(np.float64)
    return np.asarray(x, dtype=np.float64)


def mse(x, x_hat) -> float:
    """Mean squared error over all elements of one frame (or array)."""
    a, b = _to_numpy(x), _to_numpy(x_hat)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mse: shapes {a.shape} and {b.shape} differ")
    return float(np.mean((a - b) ** 2))


def psnr(x, x_hat, peak: float = 1.0, cap: float = PSNR_CAP) -> float:
    """Peak signal-to-noise ratio in dB: ``10 log10(peak^2 / mse)``."""
    err = mse(x, x_hat)
    if err == 0.0:
        return cap
    return min(cap, float(10.0 * np.log10(peak * peak / err)))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


_WINDOW = _gaussian_window()


def _windowed_mean(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    size = window.shape[0]
    patches = np.lib.stride_tricks.sliding_window_view(img, (size, size))
    return np.tensordot(patches, window, axes=([2, 3], [0, 1]))


def ssim(x, x_hat, peak: float = 1.0) -> float:
    """Structural similarity of two frames ([H, W] or [C, H, W], channels averaged)."""
    a, b = _to_numpy(x), _to_numpy(x_hat)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"ssim: shapes {a.shape} and {b.shape} differ")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise ShapeMismatchError(f"ssim expects [H, W] or [C, H, W], got {a.shape}")
    if a.shape[-1] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise ShapeMismatchError(
            f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}"
        )
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    values = []
    for ch_a, ch_b in zip(a, b):
        mu_a = _windowed_mean(ch_a, _WINDOW)
        mu_b = _windowed_mean(ch_b, _WINDOW)
        var_a = _windowed_mean(ch_a * ch_a, _WINDOW) - mu_a ** 2
        var_b = _windowed_mean(ch_b * ch_b, _WINDOW) - mu_b ** 2
        cov = _windowed_mean(ch_a * ch_b, _WINDOW) - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
        den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
        values.append(np.mean(num / den))
    return float(np.mean(values))


@dataclass
class MetricReport:
    """Per-clip, per-step metric arrays plus their aggregate means."""

    mse: np.ndarray   # [clips, steps]
    psnr: np.ndarray
    ssim: np.ndarray

    @property
    def num_steps(self) -> int:
        return self.mse.shape[1]

    @property
    def mean_mse(self) -> float:
        return float(self.mse.mean())

    @property
    def mean_psnr(self) -> float:
        return float(self.psnr.mean())

    @property
    def mean_ssim(self) -> float:
        return float(self.ssim.mean())

    def per_step_rows(self) -> list[dict]:
        """One row per future step: mean and std of each metric across clips."""
        rows = []
        for step in range(self.num_steps):
            rows.append({
                "step": step + 1,
                "mse_mean": float(self.mse[:, step].mean()),
                "mse_std": float(self.mse[:, step].std()),
                "psnr_mean": float(self.psnr[:, step].mean()),
                "psnr_std": float(self.psnr[:, step].std()),
                "ssim_mean": float(self.ssim[:, step].mean()),
                "ssim_std": float(self.ssim[:, step].std()),
            })
        return rows


def evaluate_predictions(
    truth: Tensor, predictions: Tensor, peak: float = 1.0, psnr_cap: float = PSNR_CAP
) -> MetricReport:
    """Score aligned [N, S, C, H, W] prediction/ground-truth tensors."""
    if truth.shape != predictions.shape:
        raise ShapeMismatchError(
            f"prediction horizon mismatch: {tuple(truth.shape)} vs {tuple(predictions.shape)}"
        )
    if truth.ndim != 5:
        raise ShapeMismatchError("evaluate_predictions expects [N, S, C, H, W]")
    n, s = truth.shape[0], truth.shape[1]
    out_mse = np.zeros((n, s))
    out_psnr = np.zeros((n, s))
    out_ssim = np.zeros((n, s))
    for i in range(n):
        for t in range(s):
            a, b = truth[i, t], predictions[i, t]
            out_mse[i, t] = mse(a, b)
            out_psnr[i, t] = psnr(a, b, peak=peak, cap=psnr_cap)
            out_ssim[i, t] = ssim(a, b, peak=peak)
    return MetricReport(mse=out_mse, psnr=out_psnr, ssim=out_ssim)


def per_step_curves(report: MetricReport) -> list[dict]:
    return report.per_step_rows()


def write_curves_csv(report: MetricReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_HEADER)
        writer.writeheader()
        for row in report.per_step_rows():
            writer.writerow(row)
