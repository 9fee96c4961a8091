"""Gaussian landmark heatmap rendering.

Heatmaps live on a grid `stride` times coarser than the crop (32x32 for a
128x128 crop). Each channel is a Gaussian centered at the continuous
landmark position divided by the stride, rescaled so the maximum sampled
grid value is exactly 1; landmarks outside the crop give an all-zero channel.
"""

from __future__ import annotations

import numpy as np

DEFAULT_SIGMA = 1.0
HEATMAP_SIZE = 32
HEATMAP_STRIDE = 4.0


def render_heatmaps(
    landmarks: np.ndarray,
    size: int = HEATMAP_SIZE,
    sigma: float = DEFAULT_SIGMA,
    stride: float = HEATMAP_STRIDE,
) -> np.ndarray:
    """Render one (size x size) Gaussian per landmark, shape (K, size, size).

    Landmark coordinates are in crop pixels (x, y); the Gaussian center is
    the landmark divided by `stride`. Channels for landmarks outside
    [0, size*stride) in either axis are zero.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    lm = np.asarray(landmarks, dtype=np.float64)
    k = lm.shape[0]
    out = np.zeros((k, size, size), dtype=np.float32)
    grid = np.arange(size, dtype=np.float64)
    bound = size * stride
    for i in range(k):
        x, y = lm[i]
        if not (0.0 <= x < bound and 0.0 <= y < bound):
            continue
        dx = grid - x / stride
        dy = grid - y / stride
        g = np.exp(-(dx[None, :] ** 2 + dy[:, None] ** 2) / (2.0 * sigma * sigma))
        peak = g.max()
        if peak > 0:
            g = g / peak
        out[i] = g.astype(np.float32)
    return out
