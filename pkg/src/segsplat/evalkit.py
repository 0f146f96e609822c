"""Segmentation and image-quality metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class EvalReport:
    per_query_iou: dict[str, float]
    miou: float
    psnr_db: float | None
    ssim: float | None
    config_digest: str

    def to_dict(self) -> dict:
        return {
            "per_query_iou": dict(self.per_query_iou),
            "miou": self.miou,
            "psnr_db": "inf" if self.psnr_db == math.inf else self.psnr_db,
            "ssim": self.ssim,
            "config_digest": self.config_digest,
        }


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union of two binary masks; 1.0 when both empty."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    union = int(np.logical_or(pred, gt).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(pred, gt).sum())
    return inter / union


def psnr(img: np.ndarray, ref: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; inf when equal."""
    img = np.asarray(img, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if img.shape != ref.shape:
        raise ValueError(f"image shapes differ: {img.shape} vs {ref.shape}")
    mse = float(np.mean((img - ref) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _to_luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        r, g, b = LUMA_WEIGHTS
        return r * img[:, :, 0] + g * img[:, :, 1] + b * img[:, :, 2]
    raise ValueError(f"expected H x W or H x W x 3 image, got shape {img.shape}")


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(img: np.ndarray, ref: np.ndarray) -> float:
    """Mean structural similarity over valid 11x11 Gaussian windows.

    Color inputs are converted to luma first; dynamic range is 1.
    """
    x = _to_luma(img)
    y = _to_luma(ref)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(
            f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x.shape}"
        )
    window = _gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2

    def filt(z):
        return convolve2d(z, window, mode="valid")

    mu_x = filt(x)
    mu_y = filt(y)
    sigma_x = filt(x * x) - mu_x * mu_x
    sigma_y = filt(y * y) - mu_y * mu_y
    sigma_xy = filt(x * y) - mu_x * mu_y
    ssim_map = ((2.0 * mu_x * mu_y + c1) * (2.0 * sigma_xy + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (sigma_x + sigma_y + c2)
    )
    return float(ssim_map.mean())


def build_report(
    per_query_iou: dict[str, float],
    config_digest: str,
    psnr_db: float | None = None,
    ssim_value: float | None = None,
) -> EvalReport:
    values = list(per_query_iou.values())
    miou = float(np.mean(values)) if values else 0.0
    return EvalReport(
        per_query_iou=dict(per_query_iou),
        miou=miou,
        psnr_db=psnr_db,
        ssim=ssim_value,
        config_digest=config_digest,
    )
