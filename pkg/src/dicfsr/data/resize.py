"""Bicubic resampling and landmark-driven square cropping.

Images are numpy arrays, HxW or HxWxC, values in [0, 1]. Resampling is a
separable convolution with the a = -0.5 cubic kernel; on downsampling the
kernel is stretched by the scale factor (antialiasing). Weights are computed
in float64 and reused, so results are bit-identical across calls.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

CUBIC_A = -0.5
KERNEL_WIDTH = 4.0  # support of the cubic kernel


class DegenerateBoundingBoxError(ValueError):
    """Landmark bounding box has zero area; the sample cannot be cropped."""


def cubic_kernel(x: np.ndarray) -> np.ndarray:
    """Cubic convolution kernel with a = -0.5, support [-2, 2]."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2 = x * x
    x3 = x2 * x
    a = CUBIC_A
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    out = np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))
    return out


@lru_cache(maxsize=None)
def _contributions(in_size: int, out_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-output-pixel weights and (clamped) source indices for one axis.

    Output centers map to input coordinates via u = (i + 0.5) * scale - 0.5.
    When scale > 1 the kernel is stretched by the scale factor. Weights are
    normalized to sum to 1; out-of-range taps are clamped to the edges.
    """
    scale = in_size / out_size
    if scale > 1.0:  # downsampling: widen the kernel for antialiasing
        def kernel(d):
            return cubic_kernel(d / scale) / scale
        width = KERNEL_WIDTH * scale
    else:
        kernel = cubic_kernel
        width = KERNEL_WIDTH

    u = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    left = np.floor(u - width / 2.0)
    taps = int(np.ceil(width)) + 2
    indices = left[:, None] + np.arange(taps, dtype=np.float64)[None, :]
    weights = kernel(u[:, None] - indices)
    weights /= weights.sum(axis=1, keepdims=True)
    indices = np.clip(indices, 0, in_size - 1).astype(np.int64)
    # trim taps that are zero for every output pixel
    keep = ~np.all(weights == 0.0, axis=0)
    return weights[:, keep], indices[:, keep]


def bicubic_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize an HxW or HxWxC image with the antialiased bicubic kernel.

    Deterministic: identical inputs give bit-identical outputs. The result
    is float32 and is NOT clamped (ringing may leave [0, 1] slightly).
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be >= 1, got {out_h}x{out_w}")
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    wh, ih = _contributions(img.shape[0], out_h)
    ww, iw = _contributions(img.shape[1], out_w)
    # rows: (out_h, taps, W, C) -> (out_h, W, C)
    tmp = np.einsum("ot,otwc->owc", wh, img[ih, :, :])
    out = np.einsum("ot,hotc->hoc", ww, tmp[:, iw, :])
    out = out.astype(np.float32)
    return out[:, :, 0] if squeeze else out


def resize_matrices(in_h: int, in_w: int, out_h: int, out_w: int) -> tuple[np.ndarray, np.ndarray]:
    """Dense row/column resampling matrices (out_h x in_h), (out_w x in_w).

    `resize(img) == Mh @ img @ Mw.T` per channel; used to run the same
    resample inside an autograd graph.
    """
    wh, ih = _contributions(in_h, out_h)
    ww, iw = _contributions(in_w, out_w)
    mh = np.zeros((out_h, in_h), dtype=np.float64)
    mw = np.zeros((out_w, in_w), dtype=np.float64)
    for o in range(out_h):
        np.add.at(mh[o], ih[o], wh[o])
    for o in range(out_w):
        np.add.at(mw[o], iw[o], ww[o])
    return mh, mw


def crop_and_resize(
    image: np.ndarray,
    landmarks: np.ndarray,
    out_size: int = 128,
    margin: float = 0.25,
) -> tuple[np.ndarray, np.ndarray]:
    """Square-crop around the landmark bounding box and resize to `out_size`.

    The box side is the larger bbox extent grown by `margin` on each side,
    clamped to the image. Landmarks are mapped by the same shift-and-scale;
    no rotation or other alignment is applied.

    Raises DegenerateBoundingBoxError when the landmark bbox has zero area.
    """
    image = np.asarray(image)
    lm = np.asarray(landmarks, dtype=np.float64)
    if image.size == 0:
        raise ValueError("empty image")
    h, w = image.shape[:2]
    x_min, y_min = lm[:, 0].min(), lm[:, 1].min()
    x_max, y_max = lm[:, 0].max(), lm[:, 1].max()
    if x_max - x_min <= 0.0 or y_max - y_min <= 0.0:
        raise DegenerateBoundingBoxError(
            f"landmark bbox has zero area: x span {x_max - x_min}, y span {y_max - y_min}"
        )
    side = max(x_max - x_min, y_max - y_min) * (1.0 + 2.0 * margin)
    side = int(round(side))
    side = max(1, min(side, h, w))
    cx = (x_min + x_max) / 2.0
    cy = (y_min + y_max) / 2.0
    x0 = int(round(cx - side / 2.0))
    y0 = int(round(cy - side / 2.0))
    x0 = max(0, min(x0, w - side))
    y0 = max(0, min(y0, h - side))
    crop = image[y0:y0 + side, x0:x0 + side]
    out = bicubic_resize(crop, out_size, out_size)
    s = out_size / side
    mapped = (lm - np.array([x0, y0], dtype=np.float64)) * s
    return out, mapped
