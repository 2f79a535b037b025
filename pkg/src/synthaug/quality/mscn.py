"""Mean-subtracted contrast-normalized coefficients.

Local statistics use a 7x7 Gaussian window (sigma 7/6) with edge-replicated
borders. The computation runs on windowed *differences* (neighbour minus
center), which makes the coefficients of a constant image exactly zero
instead of zero-up-to-roundoff.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

WINDOW_SIZE = 7
WINDOW_SIGMA = 7.0 / 6.0

#: Stabilizer added to the local deviation, on the 0..255 intensity scale.
DEFAULT_STABILIZER = 1.0


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    taps = np.exp(-(x * x) / (2.0 * sigma * sigma))
    win = np.outer(taps, taps)
    return win / win.sum()


_WINDOW = gaussian_window()


def mscn(image: np.ndarray, c: float = DEFAULT_STABILIZER) -> np.ndarray:
    """Coefficient raster (I - mu) / (sigma + c), same shape as the input."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a single-channel raster, got shape {img.shape}")
    if img.shape[0] < WINDOW_SIZE or img.shape[1] < WINDOW_SIZE:
        raise ValueError(
            f"image {img.shape} smaller than the {WINDOW_SIZE}x{WINDOW_SIZE} window")
    if c <= 0:
        raise ValueError(f"stabilizer must be positive, got {c}")

    half = WINDOW_SIZE // 2
    padded = np.pad(img, half, mode="edge")
    windows = sliding_window_view(padded, (WINDOW_SIZE, WINDOW_SIZE))

    H, W = img.shape
    out = np.empty((H, W), dtype=np.float64)
    # Row chunks bound the materialized difference tensor to ~16 MB.
    chunk = max(1, 40_000_000 // (W * WINDOW_SIZE * WINDOW_SIZE * 8))
    for r0 in range(0, H, chunk):
        r1 = min(H, r0 + chunk)
        diff = windows[r0:r1] - img[r0:r1, :, None, None]
        mean_diff = np.einsum("ijkl,kl->ij", diff, _WINDOW)
        var = np.einsum("ijkl,kl->ij", diff * diff, _WINDOW) - mean_diff * mean_diff
        sigma = np.sqrt(np.maximum(var, 0.0))
        out[r0:r1] = -mean_diff / (sigma + c)
    return out
