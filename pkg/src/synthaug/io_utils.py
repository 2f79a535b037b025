"""Small I/O helpers: deterministic JSON, seed derivation, PNG round-trips."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image


def _plain(obj):
    """Convert numpy scalars/arrays to plain Python containers for JSON."""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def write_json(path: str | Path, obj) -> None:
    """Write JSON with sorted keys so diffs and byte comparisons are stable."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_plain(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary parts.

    Uses SHA-256 rather than hash() so the value survives interpreter
    restarts and differing PYTHONHASHSEED.
    """
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def save_png(path: str | Path, pixels: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(pixels)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def load_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img)


def load_grayscale(path: str | Path) -> np.ndarray:
    """Load an image as a 2-D uint8 raster (luma conversion for RGB)."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"))


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
