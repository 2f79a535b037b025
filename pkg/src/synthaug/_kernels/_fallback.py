"""Pure NumPy/SciPy implementations of the hot per-pixel kernels.

Semantics are defined here and mirrored exactly by the compiled extension:
the two backends must produce bit-identical outputs on identical inputs.
"""

from __future__ import annotations

import numpy as np
import scipy.ndimage as ndi

# Forward step (dr, dc) per direction octant; octant k covers gradient
# angles [k*45 - 22.5, k*45 + 22.5) degrees measured by atan2(gy, gx).
_DR = np.array([0, 1, 1, 1, 0, -1, -1, -1], dtype=np.int64)
_DC = np.array([1, 1, 0, -1, -1, -1, 0, 1], dtype=np.int64)

_OCTANT_OFFSET = np.pi / 8
_OCTANT_WIDTH = np.pi / 4


def nonmax_suppress(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep pixels that are local gradient-magnitude maxima.

    A pixel survives when its magnitude is strictly greater than the
    neighbour behind it (against the gradient) and at least as large as the
    neighbour ahead of it. The asymmetric tie rule keeps exactly one pixel
    of a two-pixel plateau and rotates consistently with the image because
    it is anchored to the signed gradient direction. The one-pixel border
    is always suppressed.
    """
    H, W = mag.shape
    out = np.zeros((H, W), dtype=np.uint8)
    if H < 3 or W < 3:
        return out
    theta = np.arctan2(gy, gx)
    octant = np.floor((theta + _OCTANT_OFFSET) / _OCTANT_WIDTH).astype(np.int64) % 8

    oc = octant[1:-1, 1:-1]
    dr = _DR[oc]
    dc = _DC[oc]
    rows = np.arange(1, H - 1, dtype=np.int64)[:, None]
    cols = np.arange(1, W - 1, dtype=np.int64)[None, :]
    m = mag[1:-1, 1:-1]
    ahead = mag[rows + dr, cols + dc]
    behind = mag[rows - dr, cols - dc]
    out[1:-1, 1:-1] = (m > 0) & (m > behind) & (m >= ahead)
    return out


def hysteresis(candidate: np.ndarray, strong: np.ndarray) -> np.ndarray:
    """Keep candidate pixels 8-connected to at least one strong pixel."""
    out = np.zeros(candidate.shape, dtype=np.uint8)
    seeds = (strong != 0) & (candidate != 0)
    if not seeds.any():
        return out
    labels, count = ndi.label(candidate != 0, structure=np.ones((3, 3), bool))
    good = np.zeros(count + 1, dtype=bool)
    good[np.unique(labels[seeds])] = True
    good[0] = False
    out[good[labels]] = 1
    return out
