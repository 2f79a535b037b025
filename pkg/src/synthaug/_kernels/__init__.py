"""Hot per-pixel kernels with a compiled core and a NumPy fallback.

The compiled extension is preferred when it imported cleanly; otherwise the
pure NumPy implementation is used. Both produce bit-identical results, so
callers never need to know which one is active (``BACKEND`` reports it).
"""

from __future__ import annotations

import numpy as np

from . import _fallback

try:
    from . import _native as _impl
    BACKEND = "native"
except ImportError:  # extension not built
    _impl = _fallback
    BACKEND = "python"


def _as_f64(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=np.float64)


def _as_u8(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr.astype(np.uint8, copy=False))


def nonmax_suppress(mag, gx, gy, *, backend=None) -> np.ndarray:
    """Boolean mask of directional local maxima of the gradient magnitude."""
    impl = _select(backend)
    return impl.nonmax_suppress(_as_f64(mag), _as_f64(gx), _as_f64(gy)).astype(bool)


def hysteresis(candidate, strong, *, backend=None) -> np.ndarray:
    """Boolean mask of candidate pixels 8-connected to a strong pixel."""
    impl = _select(backend)
    return impl.hysteresis(_as_u8(candidate), _as_u8(strong)).astype(bool)


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _fallback
    if backend == "native":
        if BACKEND != "native":
            raise RuntimeError("native kernels are not built")
        return _impl
    raise ValueError(f"unknown kernel backend {backend!r}")


def available_backends() -> list[str]:
    return ["native", "python"] if BACKEND == "native" else ["python"]
