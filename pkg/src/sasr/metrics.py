"""Image quality metrics.

2-D arrays score directly; 4-D (H, W, Z, N) inputs score as the mean of
per-(slice, direction) 2-D values. Dynamic range comes from the
reference image, so metric(x, x) is exact regardless of scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(test, ref):
    test = np.asarray(test, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if test.shape != ref.shape:
        raise DataError(f"shape mismatch {test.shape} vs {ref.shape}")
    if test.ndim != 2:
        raise DataError(f"expected 2-D images, got {test.ndim}-D")
    return test, ref


def psnr(test: np.ndarray, ref: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB, peak = max(ref), capped at 100."""
    test, ref = _check_pair(test, ref)
    mse = float(np.mean((test - ref) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    peak = float(ref.max())
    if peak <= 0.0:
        return 0.0  # degenerate non-positive reference
    return float(min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse)))


def _gaussian_window() -> np.ndarray:
    half = SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * SSIM_SIGMA**2))
    w = np.outer(g, g)
    return w / w.sum()


def _local_mean(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(img, win.shape)
    return np.tensordot(view, win, axes=([2, 3], [0, 1]))


def ssim(test: np.ndarray, ref: np.ndarray) -> float:
    """Mean structural similarity, Gaussian 11x11 window, valid mode."""
    test, ref = _check_pair(test, ref)
    if min(test.shape) < SSIM_WINDOW:
        raise DataError(
            f"image {test.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    drange = float(ref.max() - ref.min())
    if drange == 0.0:
        drange = 1.0
    c1 = (SSIM_K1 * drange) ** 2
    c2 = (SSIM_K2 * drange) ** 2
    win = _gaussian_window()
    mu_t = _local_mean(test, win)
    mu_r = _local_mean(ref, win)
    var_t = _local_mean(test * test, win) - mu_t**2
    var_r = _local_mean(ref * ref, win) - mu_r**2
    cov = _local_mean(test * ref, win) - mu_t * mu_r
    num = (2.0 * mu_t * mu_r + c1) * (2.0 * cov + c2)
    den = (mu_t**2 + mu_r**2 + c1) * (var_t + var_r + c2)
    return float(np.mean(num / den))


def nrmse(test: np.ndarray, ref: np.ndarray) -> float:
    """||test - ref|| / ||ref||; 0.0 for an exact match of a zero
    reference, inf for a mismatch against one."""
    test, ref = _check_pair(test, ref)
    diff = float(np.linalg.norm(test - ref))
    norm = float(np.linalg.norm(ref))
    if norm == 0.0:
        return 0.0 if diff == 0.0 else float("inf")
    return diff / norm


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: float
    nrmse: float
    per_channel: tuple  # ((z, n, psnr, ssim, nrmse), ...)

    def as_dict(self):
        return {
            "psnr_db": self.psnr_db,
            "ssim": self.ssim,
            "nrmse": self.nrmse,
            "per_channel": [
                {"slice": z, "direction": n, "psnr_db": p, "ssim": s, "nrmse": e}
                for z, n, p, s, e in self.per_channel
            ],
        }


def volume_metrics(test, ref) -> MetricReport:
    """Score two 4-D volumes channel by channel."""
    t = np.asarray(getattr(test, "data", test), dtype=np.float64)
    r = np.asarray(getattr(ref, "data", ref), dtype=np.float64)
    if t.shape != r.shape:
        raise DataError(f"shape mismatch {t.shape} vs {r.shape}")
    if t.ndim != 4:
        raise DataError(f"expected 4-D volumes, got {t.ndim}-D")
    rows = []
    for z in range(t.shape[2]):
        for n in range(t.shape[3]):
            rows.append((
                z, n,
                psnr(t[:, :, z, n], r[:, :, z, n]),
                ssim(t[:, :, z, n], r[:, :, z, n]),
                nrmse(t[:, :, z, n], r[:, :, z, n]),
            ))
    arr = np.array([row[2:] for row in rows], dtype=np.float64)
    return MetricReport(
        float(arr[:, 0].mean()), float(arr[:, 1].mean()), float(arr[:, 2].mean()),
        tuple(rows),
    )
