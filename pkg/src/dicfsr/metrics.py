"""Evaluation metrics: Y-channel PSNR/SSIM, heatmap decoding, NRMSE."""

import dataclasses
import json
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .data.heatmaps import HEATMAP_STRIDE

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def rgb_to_y(image):
    """Studio-swing BT.601 luma for an (H, W, 3) image with values in [0,1].

    Returns (H, W) with range [16/255, 235/255].
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
    r, g, b = image[..., 0], image[..., 1], image[..., 2]
    return (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0


def psnr_y(sr, hr):
    """Y-channel PSNR in dB on [0,1] images; identical inputs give 100.0."""
    sr = np.asarray(sr)
    hr = np.asarray(hr)
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {sr.shape} vs {hr.shape}")
    mse = float(np.mean((rgb_to_y(sr) - rgb_to_y(hr)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def _gaussian_window(size, sigma):
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim_y(sr, hr):
    """Y-channel SSIM: 11x11 Gaussian window (sigma 1.5), valid windows only."""
    sr = np.asarray(sr)
    hr = np.asarray(hr)
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {sr.shape} vs {hr.shape}")
    y1 = rgb_to_y(sr)
    y2 = rgb_to_y(hr)
    if min(y1.shape) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    window = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2

    mu1 = convolve2d(y1, window, mode="valid")
    mu2 = convolve2d(y2, window, mode="valid")
    mu1_sq = mu1 * mu1
    mu2_sq = mu2 * mu2
    mu12 = mu1 * mu2
    sigma1_sq = convolve2d(y1 * y1, window, mode="valid") - mu1_sq
    sigma2_sq = convolve2d(y2 * y2, window, mode="valid") - mu2_sq
    sigma12 = convolve2d(y1 * y2, window, mode="valid") - mu12

    num = (2.0 * mu12 + c1) * (2.0 * sigma12 + c2)
    den = (mu1_sq + mu2_sq + c1) * (sigma1_sq + sigma2_sq + c2)
    return float(np.mean(num / den))


def heatmaps_to_landmarks(heatmaps, stride=HEATMAP_STRIDE):
    """Decode (K, H, W) heatmaps to HR-space coordinates.

    Per channel: argmax plus quadratic sub-pixel refinement from the 3x3
    neighborhood, scaled by ``stride``. Returns (coords (K, 2) float64 as
    (x, y), ok (K,) bool). An all-zero channel decodes to the grid center
    with ok=False.
    """
    heatmaps = np.asarray(heatmaps, dtype=np.float64)
    if heatmaps.ndim != 3:
        raise ValueError(f"expected (K, H, W) heatmaps, got {heatmaps.shape}")
    k, h, w = heatmaps.shape
    coords = np.zeros((k, 2), dtype=np.float64)
    ok = np.ones(k, dtype=bool)
    for i in range(k):
        ch = heatmaps[i]
        if not ch.any():
            coords[i] = ((w - 1) / 2.0 * stride, (h - 1) / 2.0 * stride)
            ok[i] = False
            continue
        flat = int(np.argmax(ch))
        row, col = divmod(flat, w)
        x = float(col)
        y = float(row)
        if 0 < col < w - 1:
            x += _parabolic_offset(ch[row, col - 1], ch[row, col], ch[row, col + 1])
        if 0 < row < h - 1:
            y += _parabolic_offset(ch[row - 1, col], ch[row, col], ch[row + 1, col])
        coords[i] = (x * stride, y * stride)
    return coords, ok


def _parabolic_offset(left, center, right):
    denom = left - 2.0 * center + right
    if denom >= 0.0:
        return 0.0
    offset = 0.5 * (left - right) / denom
    return float(np.clip(offset, -0.5, 0.5))


def nrmse(pred, gt, face_width=None):
    """RMS landmark distance normalized by the ground-truth face width.

    ``face_width`` defaults to max_x - min_x over the ground-truth set.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 2:
        raise ValueError(f"expected matching (K, 2) sets, got {pred.shape} vs {gt.shape}")
    if face_width is None:
        face_width = float(gt[:, 0].max() - gt[:, 0].min())
    if face_width <= 0:
        raise ValueError(f"face width must be positive, got {face_width}")
    rms = float(np.sqrt(np.mean(np.sum((pred - gt) ** 2, axis=1))))
    return rms / face_width


@dataclass
class MetricReport:
    id: str
    psnr_db: float
    ssim: float
    nrmse: float
    per_step: list = None

    def to_json(self):
        payload = dataclasses.asdict(self)
        if self.per_step is None:
            payload.pop("per_step")
        return json.dumps(payload)
