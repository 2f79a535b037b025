# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled per-pixel kernels.

Must stay bit-identical to `_fallback`: same octant quantization constants,
same comparison rules, same connectivity.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, floor, M_PI

cnp.import_array()


def nonmax_suppress(double[:, ::1] mag, double[:, ::1] gx, double[:, ::1] gy):
    cdef Py_ssize_t H = mag.shape[0]
    cdef Py_ssize_t W = mag.shape[1]
    out_arr = np.zeros((H, W), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    if H < 3 or W < 3:
        return out_arr

    cdef int[8] DR = [0, 1, 1, 1, 0, -1, -1, -1]
    cdef int[8] DC = [1, 1, 0, -1, -1, -1, 0, 1]
    cdef double OFFSET = M_PI / 8.0
    cdef double WIDTH = M_PI / 4.0

    cdef Py_ssize_t r, c
    cdef double m, theta
    cdef long o

    for r in range(1, H - 1):
        for c in range(1, W - 1):
            m = mag[r, c]
            if m <= 0:
                continue
            theta = atan2(gy[r, c], gx[r, c])
            o = <long>floor((theta + OFFSET) / WIDTH) % 8
            if o < 0:
                o += 8
            if m > mag[r - DR[o], c - DC[o]] and m >= mag[r + DR[o], c + DC[o]]:
                out[r, c] = 1
    return out_arr


def hysteresis(const unsigned char[:, ::1] candidate,
               const unsigned char[:, ::1] strong):
    cdef Py_ssize_t H = candidate.shape[0]
    cdef Py_ssize_t W = candidate.shape[1]
    out_arr = np.zeros((H, W), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr

    stack_arr = np.empty(H * W, dtype=np.int64)
    cdef long long[::1] stack = stack_arr
    cdef Py_ssize_t top = 0
    cdef Py_ssize_t r, c, nr, nc
    cdef long long pos
    cdef int dr, dc

    for r in range(H):
        for c in range(W):
            if strong[r, c] and candidate[r, c] and not out[r, c]:
                out[r, c] = 1
                stack[top] = r * W + c
                top += 1
                while top > 0:
                    top -= 1
                    pos = stack[top]
                    nr = <Py_ssize_t>(pos // W)
                    nc = <Py_ssize_t>(pos % W)
                    for dr in range(-1, 2):
                        for dc in range(-1, 2):
                            if dr == 0 and dc == 0:
                                continue
                            if 0 <= nr + dr < H and 0 <= nc + dc < W:
                                if candidate[nr + dr, nc + dc] and not out[nr + dr, nc + dc]:
                                    out[nr + dr, nc + dc] = 1
                                    stack[top] = (nr + dr) * W + (nc + dc)
                                    top += 1
    return out_arr
