"""Natural-scene-statistics features and the distance-to-pristine score.

The 36-dim feature vector holds, for each of two scales (full and half
resolution): the symmetric GGD fit (alpha, sigma^2) of the MSCN raster,
then the asymmetric fit (alpha, mean_offset, sigma_left, sigma_right) of
the four orientation products: horizontal, vertical, main diagonal,
anti-diagonal. 2 * (2 + 4*4) = 36.

Scoring is either a user-supplied linear model or, by default, the
Mahalanobis distance to pristine-corpus feature statistics. The pristine
statistics are plain data (mean + covariance) so they can be refit on any
folder of clean photos.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ..exceptions import ConfigError
from ..io_utils import load_grayscale, read_json, write_json
from .aggd import fit_aggd, fit_ggd
from .mscn import WINDOW_SIZE, mscn

FEATURE_DIM = 36
_SCALES = 2
_MIN_SIDE = WINDOW_SIZE * 2  # two half-resolution steps must stay >= window

_ORIENTATIONS = ("horizontal", "vertical", "diag_main", "diag_anti")


def orientation_products(m: np.ndarray) -> dict[str, np.ndarray]:
    return {
        "horizontal": m[:, :-1] * m[:, 1:],
        "vertical": m[:-1, :] * m[1:, :],
        "diag_main": m[:-1, :-1] * m[1:, 1:],
        "diag_anti": m[1:, :-1] * m[:-1, 1:],
    }


def downsample_half(img: np.ndarray) -> np.ndarray:
    """2x2 box average (odd trailing row/column dropped first)."""
    h, w = img.shape
    img = img[: h - (h % 2), : w - (w % 2)]
    return (img[0::2, 0::2] + img[0::2, 1::2] + img[1::2, 0::2] + img[1::2, 1::2]) / 4.0


def brisque_features(image: np.ndarray, c: float = 1.0) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a single-channel raster, got shape {img.shape}")
    if min(img.shape) < _MIN_SIDE:
        raise ValueError(f"image {img.shape} too small for two scales "
                         f"(needs at least {_MIN_SIDE} per side)")
    features: list[float] = []
    for _ in range(_SCALES):
        coeffs = mscn(img, c=c)
        alpha, sigma_sq = fit_ggd(coeffs)
        features.extend([alpha, sigma_sq])
        for name in _ORIENTATIONS:
            params = fit_aggd(orientation_products(coeffs)[name])
            features.extend([params.alpha, params.mean_offset,
                             params.sigma_left, params.sigma_right])
        img = downsample_half(img)
    out = np.asarray(features, dtype=np.float64)
    assert out.shape == (FEATURE_DIM,)
    return out


def transpose_permutation() -> np.ndarray:
    """Feature-index permutation induced by transposing the input image.

    Transposing swaps the horizontal and vertical product blocks while the
    GGD block and both diagonal blocks map to themselves (the main-diagonal
    and anti-diagonal neighbour pairs are each preserved as a set).
    """
    perm = np.arange(FEATURE_DIM)
    per_scale = 2 + 4 * 4
    for s in range(_SCALES):
        base = s * per_scale + 2
        h = np.arange(base, base + 4)
        v = np.arange(base + 4, base + 8)
        perm[h], perm[v] = v, h
    return perm


# ---------------------------------------------------------------------------
# Scoring against pristine statistics


@dataclass(frozen=True)
class SurrogateStats:
    mean: np.ndarray
    covariance: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if mean.shape != (FEATURE_DIM,) or cov.shape != (FEATURE_DIM, FEATURE_DIM):
            raise ValueError(f"stats must be {FEATURE_DIM}-mean and "
                             f"{FEATURE_DIM}x{FEATURE_DIM} covariance")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_precision", np.linalg.pinv(cov))

    def save(self, path: str | Path) -> None:
        write_json(path, {
            "kind": "mahalanobis",
            "metric": "brisque",
            "mean": self.mean,
            "covariance": self.covariance,
            "provenance": self.provenance,
        })


def load_surrogate_stats(path: str | Path | None = None) -> SurrogateStats:
    """Load stats from a file, or the small bundled default when path is None."""
    if path is None:
        ref = resources.files("synthaug.quality").joinpath("data/pristine_stats.json")
        with resources.as_file(ref) as p:
            data = read_json(p)
    else:
        data = read_json(path)
    cov = np.asarray(data["covariance"], dtype=np.float64)
    if cov.ndim == 1:  # flat row-major
        cov = cov.reshape(FEATURE_DIM, FEATURE_DIM)
    return SurrogateStats(mean=np.asarray(data["mean"], dtype=np.float64),
                          covariance=cov,
                          provenance=data.get("provenance", ""))


def fit_surrogate_stats(image_paths, min_images: int = 100,
                        provenance: str = "") -> SurrogateStats:
    """Fit pristine statistics from a corpus of clean photos."""
    paths = [Path(p) for p in image_paths]
    if len(paths) < min_images:
        raise ValueError(f"need at least {min_images} pristine images, got {len(paths)}")
    feats = np.stack([brisque_features(load_grayscale(p)) for p in paths])
    return SurrogateStats(mean=feats.mean(axis=0),
                          covariance=np.cov(feats, rowvar=False),
                          provenance=provenance or f"fit on {len(paths)} images")


def brisque_score(features: np.ndarray, model) -> float:
    """Lower-is-better quality score for a 36-dim feature vector.

    `model` is either SurrogateStats (Mahalanobis distance to the pristine
    mean) or a dict {"kind": "linear", "weights": [...36], "bias": b} for a
    pretrained regression.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.shape != (FEATURE_DIM,):
        raise ValueError(f"expected a {FEATURE_DIM}-dim feature vector, got {f.shape}")
    if isinstance(model, SurrogateStats):
        d = f - model.mean
        q = float(d @ model._precision @ d)
        return math.sqrt(max(q, 0.0))
    if isinstance(model, dict) and model.get("kind") == "linear":
        w = np.asarray(model["weights"], dtype=np.float64)
        if w.shape != (FEATURE_DIM,):
            raise ValueError("linear model weights must be 36-dim")
        return float(f @ w + float(model.get("bias", 0.0)))
    raise ConfigError("no usable reference model: supply SurrogateStats or a "
                      "linear model dict")
