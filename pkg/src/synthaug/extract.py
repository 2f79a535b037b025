"""Conditioning-feature extraction from real images.

Native extractors: a classical Canny edge detector (Gaussian smoothing,
Sobel gradients, directional non-maximum suppression, 8-connected
hysteresis) and an intensity-threshold foreground mask. The deliberately
deficient variant transposes a segmentation mask, which also transposes the
label geometry downstream. Anything heavier (pose, learned segmentation)
stays behind the external subprocess contract.
"""

from __future__ import annotations

import json
import logging
import math
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.ndimage as ndi

from . import _kernels
from .exceptions import AdapterError, ConfigError, ContractError
from .io_utils import load_grayscale, load_png, save_png

logger = logging.getLogger(__name__)

NATIVE = "native"
EXTERNAL = "external"

DEFAULT_CANNY_SIGMA = 1.4
DEFAULT_CANNY_LOW = 50.0
DEFAULT_CANNY_HIGH = 150.0


@dataclass(frozen=True, slots=True)
class ExtractorDescriptor:
    name: str
    kind: str = NATIVE
    transposes_geometry: bool = False

    def __post_init__(self):
        if self.kind not in (NATIVE, EXTERNAL):
            raise ValueError(f"extractor kind must be native or external, got {self.kind!r}")


@dataclass(frozen=True)
class FeatureImage:
    """Raster conditioning a generator, tied back to its source record."""

    source_id: str
    extractor_name: str
    pixels: np.ndarray
    transposes_geometry: bool = False
    path: str | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim not in (2, 3) or px.size == 0:
            raise ValueError("feature raster must be a non-empty 2-D or 3-D array")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


# ---------------------------------------------------------------------------
# Canny edge extraction


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps with radius ceil(3*sigma)."""
    radius = max(1, math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def _smooth(image: np.ndarray, sigma: float) -> np.ndarray:
    taps = gaussian_kernel1d(sigma)
    # Edge replication keeps the step-edge response exact away from borders.
    out = ndi.correlate1d(image, taps, axis=0, mode="nearest")
    return ndi.correlate1d(out, taps, axis=1, mode="nearest")


def canny_edges(image: np.ndarray, sigma: float = DEFAULT_CANNY_SIGMA,
                low: float = DEFAULT_CANNY_LOW, high: float = DEFAULT_CANNY_HIGH,
                *, backend: str | None = None) -> np.ndarray:
    """Binary edge map of a grayscale raster, values in {0, 255}.

    Thresholds apply to the Sobel gradient magnitude of the smoothed image,
    so for 8-bit input they live on the usual 0..~1443 scale.
    """
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"expected a single-channel raster, got shape {img.shape}")
    if img.size == 0:
        raise ValueError("image is empty")
    if not (0 < low < high):
        raise ValueError(f"thresholds must satisfy 0 < low < high, got {low}, {high}")

    smoothed = _smooth(img.astype(np.float64), sigma)
    gx = ndi.sobel(smoothed, axis=1, mode="nearest")
    gy = ndi.sobel(smoothed, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)

    maxima = _kernels.nonmax_suppress(mag, gx, gy, backend=backend)
    candidate = maxima & (mag >= low)
    strong = candidate & (mag >= high)
    edges = _kernels.hysteresis(candidate, strong, backend=backend)
    return edges.astype(np.uint8) * 255


def extract_canny(image: np.ndarray, sigma: float = DEFAULT_CANNY_SIGMA,
                  low: float = DEFAULT_CANNY_LOW, high: float = DEFAULT_CANNY_HIGH,
                  source_id: str = "") -> FeatureImage:
    return FeatureImage(source_id=source_id, extractor_name="canny",
                        pixels=canny_edges(image, sigma, low, high))


# ---------------------------------------------------------------------------
# Threshold mask and the deficient transposed variant


def otsu_threshold(image: np.ndarray) -> float:
    """Otsu's between-class-variance threshold on a uint8 histogram."""
    hist = np.bincount(np.asarray(image, dtype=np.uint8).ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    if total == 0:
        return 0.0
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    m0 = np.cumsum(hist * levels)
    mean_total = m0[-1]
    w1 = total - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = m0 / w0
        mu1 = (mean_total - m0) / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between[~np.isfinite(between)] = -1.0
    return float(np.argmax(between))


def threshold_mask(image: np.ndarray, source_id: str = "") -> FeatureImage:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"expected a single-channel raster, got shape {img.shape}")
    t = otsu_threshold(img)
    mask = ((img > t).astype(np.uint8)) * 255
    return FeatureImage(source_id=source_id, extractor_name="threshold_mask", pixels=mask)


def extract_false_segmentation(mask: FeatureImage) -> FeatureImage:
    """Matrix transpose of a segmentation mask; label carry-over must then
    transpose each bounding box as well."""
    px = mask.pixels
    transposed = px.T if px.ndim == 2 else np.transpose(px, (1, 0, 2))
    return FeatureImage(source_id=mask.source_id,
                        extractor_name="false_segmentation",
                        pixels=np.ascontiguousarray(transposed),
                        transposes_geometry=not mask.transposes_geometry)


# ---------------------------------------------------------------------------
# Extractor objects and registry


class CannyExtractor:
    def __init__(self, sigma=DEFAULT_CANNY_SIGMA, low=DEFAULT_CANNY_LOW,
                 high=DEFAULT_CANNY_HIGH):
        self.descriptor = ExtractorDescriptor("canny", NATIVE, False)
        self.sigma, self.low, self.high = sigma, low, high
        self.max_parallelism = 0  # pure function, unbounded fan-out

    def extract_path(self, image_path: str | Path, source_id: str = "") -> FeatureImage:
        return extract_canny(load_grayscale(image_path), self.sigma, self.low,
                             self.high, source_id=source_id)


class ThresholdMaskExtractor:
    def __init__(self):
        self.descriptor = ExtractorDescriptor("threshold_mask", NATIVE, False)
        self.max_parallelism = 0

    def extract_path(self, image_path: str | Path, source_id: str = "") -> FeatureImage:
        return threshold_mask(load_grayscale(image_path), source_id=source_id)


class FalseSegmentationExtractor:
    """Transposed mask conditioning, built on top of a base mask extractor."""

    def __init__(self, base=None):
        self.base = base or ThresholdMaskExtractor()
        self.descriptor = ExtractorDescriptor("false_segmentation", NATIVE, True)
        self.max_parallelism = getattr(self.base, "max_parallelism", 0)

    def extract_path(self, image_path: str | Path, source_id: str = "") -> FeatureImage:
        return extract_false_segmentation(self.base.extract_path(image_path, source_id))


class ExternalExtractor:
    """Subprocess-backed extractor: `<exe> --input <path> --output <path>`."""

    def __init__(self, name: str, command, transposes_geometry: bool = False,
                 max_parallelism: int = 1):
        self.descriptor = ExtractorDescriptor(name, EXTERNAL, transposes_geometry)
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.max_parallelism = max_parallelism

    def extract_path(self, image_path: str | Path, source_id: str = "") -> FeatureImage:
        return run_external_extractor(self, image_path, source_id=source_id)


def run_external_extractor(extractor: ExternalExtractor, image_path: str | Path,
                           source_id: str = "") -> FeatureImage:
    """Invoke an external feature backend and validate its output raster."""
    image_path = Path(image_path)
    descriptor = extractor.descriptor
    source = load_png(image_path)
    src_h, src_w = source.shape[0], source.shape[1]

    with tempfile.TemporaryDirectory(prefix="synthaug-extract-") as tmp:
        out_path = Path(tmp) / "feature.png"
        cmd = extractor.command + ["--input", str(image_path), "--output", str(out_path)]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            raise AdapterError(
                f"extractor {descriptor.name!r} exited with {proc.returncode}",
                command=cmd, returncode=proc.returncode, stderr=proc.stderr)
        if not out_path.exists():
            raise ContractError(f"extractor {descriptor.name!r} wrote no output file")
        pixels = load_png(out_path)

    expected = (src_w, src_h) if descriptor.transposes_geometry else (src_h, src_w)
    if (pixels.shape[0], pixels.shape[1]) != expected:
        raise ContractError(
            f"extractor {descriptor.name!r} returned {pixels.shape[:2]}, "
            f"expected {expected} for a {src_h}x{src_w} source")
    return FeatureImage(source_id=source_id, extractor_name=descriptor.name,
                        pixels=pixels,
                        transposes_geometry=descriptor.transposes_geometry)


def build_registry(canny_params: dict | None = None, external: list[dict] = ()) -> dict:
    """Name -> extractor map with the native set plus configured externals."""
    params = canny_params or {}
    registry = {
        "canny": CannyExtractor(params.get("sigma", DEFAULT_CANNY_SIGMA),
                                params.get("low", DEFAULT_CANNY_LOW),
                                params.get("high", DEFAULT_CANNY_HIGH)),
        "threshold_mask": ThresholdMaskExtractor(),
    }
    registry["false_segmentation"] = FalseSegmentationExtractor(registry["threshold_mask"])
    for entry in external or ():
        name = entry["name"]
        if name in registry:
            raise ConfigError(f"extractor name {name!r} already registered")
        registry[name] = ExternalExtractor(
            name, entry["command"],
            transposes_geometry=bool(entry.get("transposes_geometry", False)),
            max_parallelism=int(entry.get("max_parallelism", 1)))
    return registry


# ---------------------------------------------------------------------------
# Feature persistence: PNG plus a sidecar JSON


def save_feature(feature: FeatureImage, png_path: str | Path) -> FeatureImage:
    png_path = Path(png_path)
    save_png(png_path, feature.pixels)
    sidecar = {
        "extractor_name": feature.extractor_name,
        "source_id": feature.source_id,
        "transposes_geometry": feature.transposes_geometry,
    }
    png_path.with_suffix(".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return FeatureImage(source_id=feature.source_id,
                        extractor_name=feature.extractor_name,
                        pixels=feature.pixels,
                        transposes_geometry=feature.transposes_geometry,
                        path=str(png_path))


def load_feature(png_path: str | Path) -> FeatureImage:
    png_path = Path(png_path)
    sidecar = json.loads(png_path.with_suffix(".json").read_text(encoding="utf-8"))
    return FeatureImage(source_id=sidecar["source_id"],
                        extractor_name=sidecar["extractor_name"],
                        pixels=load_png(png_path),
                        transposes_geometry=bool(sidecar["transposes_geometry"]),
                        path=str(png_path))
