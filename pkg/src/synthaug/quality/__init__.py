"""Quality metrics for generated images: a native natural-scene-statistics
scorer, a detector-confidence metric, and subprocess adapters for neural
scorers. Every metric declares its polarity explicitly; samplers consume
polarity from the registry rather than assuming it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..adapters import DetectorAdapter, ExternalMetricAdapter
from ..core import DatasetManifest, QualityRecord
from ..exceptions import ConfigError, PoolScoringError
from ..io_utils import load_grayscale
from .aggd import AggdParams, fit_aggd, fit_ggd
from .brisque import (FEATURE_DIM, SurrogateStats, brisque_features,
                      brisque_score, fit_surrogate_stats, load_surrogate_stats,
                      transpose_permutation)
from .mscn import mscn

__all__ = [
    "AggdParams", "fit_aggd", "fit_ggd", "mscn",
    "FEATURE_DIM", "SurrogateStats", "brisque_features", "brisque_score",
    "fit_surrogate_stats", "load_surrogate_stats", "transpose_permutation",
    "MetricDescriptor", "BrisqueMetric", "ExternalScoreMetric",
    "ConfidenceMetric", "confidence_metric", "score_pool", "ScoredPool",
    "build_metric_registry",
    "HIGHER_IS_BETTER", "LOWER_IS_BETTER", "MODEL_AGNOSTIC", "MODEL_AWARE",
]

logger = logging.getLogger(__name__)

HIGHER_IS_BETTER = "higher_is_better"
LOWER_IS_BETTER = "lower_is_better"
MODEL_AGNOSTIC = "model_agnostic"
MODEL_AWARE = "model_aware"


@dataclass(frozen=True, slots=True)
class MetricDescriptor:
    name: str
    polarity: str
    kind: str

    def __post_init__(self):
        if self.polarity not in (HIGHER_IS_BETTER, LOWER_IS_BETTER):
            raise ValueError(f"metric {self.name!r} must declare polarity explicitly")
        if self.kind not in (MODEL_AGNOSTIC, MODEL_AWARE):
            raise ValueError(f"metric {self.name!r} has unknown kind {self.kind!r}")


class BrisqueMetric:
    """Distance-to-pristine scorer; lower scores mean fewer anomalies."""

    def __init__(self, stats: SurrogateStats | None = None):
        self.descriptor = MetricDescriptor("brisque", LOWER_IS_BETTER, MODEL_AGNOSTIC)
        self.stats = stats or load_surrogate_stats()

    def score(self, image_path: str | Path) -> float:
        return brisque_score(brisque_features(load_grayscale(image_path)), self.stats)

    def embed(self, image_path: str | Path) -> np.ndarray:
        return brisque_features(load_grayscale(image_path))


class ExternalScoreMetric:
    """Neural scorers (aesthetic/vision-language) via the subprocess contract."""

    def __init__(self, name: str, command, polarity: str = HIGHER_IS_BETTER):
        self.descriptor = MetricDescriptor(name, polarity, MODEL_AGNOSTIC)
        self._adapter = ExternalMetricAdapter(command)

    def score(self, image_path: str | Path) -> float:
        return self._adapter.score(image_path)


def confidence_metric(image_path: str | Path, detector: DetectorAdapter,
                      weights_path: str | Path, target_class_id: int = 0) -> float:
    """Maximum detection confidence for the target class; 0 with no hit.

    Low values flag images the current model is least sure about, which the
    sampler treats as most informative.
    """
    result = detector.predict(weights_path, [str(image_path)])
    return _max_confidence(result.get(str(image_path), []), target_class_id)


def _max_confidence(detections: list[dict], target_class_id: int) -> float:
    best = 0.0
    for det in detections:
        if int(det.get("class_id", -1)) == target_class_id:
            best = max(best, float(det["confidence"]))
    return best


class ConfidenceMetric:
    """Model-aware metric; batches the whole pool through one predict call."""

    def __init__(self, detector: DetectorAdapter, weights_path: str | Path,
                 target_class_id: int = 0):
        self.descriptor = MetricDescriptor("confidence", LOWER_IS_BETTER, MODEL_AWARE)
        self.detector = detector
        self.weights_path = str(weights_path)
        self.target_class_id = target_class_id

    def score(self, image_path: str | Path) -> float:
        return confidence_metric(image_path, self.detector, self.weights_path,
                                 self.target_class_id)

    def score_batch(self, image_paths) -> dict[str, float]:
        result = self.detector.predict(self.weights_path, image_paths)
        return {str(p): _max_confidence(result.get(str(p), []), self.target_class_id)
                for p in image_paths}


@dataclass(frozen=True, slots=True)
class ScoredPool:
    records: tuple[QualityRecord, ...]
    failures: tuple[tuple[str, str], ...]  # (image id, reason)


def score_pool(manifest: DatasetManifest, metric,
               failure_threshold: float = 0.5) -> ScoredPool:
    """Score every image in a manifest with one metric.

    Per-image failures are logged and excluded; if more than
    `failure_threshold` of the pool fails, the whole scoring run errors.
    """
    records: list[QualityRecord] = []
    failures: list[tuple[str, str]] = []
    name = metric.descriptor.name

    batch = getattr(metric, "score_batch", None)
    scores: dict[str, float] = {}
    if batch is not None and manifest.records:
        try:
            scores = batch([rec.path for rec in manifest.records])
        except Exception as exc:  # fall back to per-image scoring
            logger.warning("batch scoring with %s failed (%s); retrying per image",
                           name, exc)
            scores = {}

    for rec in manifest.records:
        try:
            value = scores[rec.path] if rec.path in scores else metric.score(rec.path)
            records.append(QualityRecord(image_id=rec.id, metric_name=name,
                                         score=float(value)))
        except Exception as exc:
            logger.warning("scoring %s on %s failed: %s", name, rec.id, exc)
            failures.append((rec.id, str(exc)))

    total = len(manifest.records)
    if total and len(failures) / total > failure_threshold:
        raise PoolScoringError(
            f"{len(failures)} of {total} images failed to score with {name}")
    return ScoredPool(records=tuple(records), failures=tuple(failures))


def build_metric_registry(stats: SurrogateStats | None = None,
                          external: list[dict] = ()) -> dict:
    """Name -> metric map: native scorer plus configured external scorers."""
    registry: dict[str, object] = {"brisque": BrisqueMetric(stats)}
    for entry in external or ():
        name = entry["name"]
        if name in registry:
            raise ConfigError(f"metric name {name!r} already registered")
        registry[name] = ExternalScoreMetric(
            name, entry["command"],
            polarity=entry.get("polarity", HIGHER_IS_BETTER))
    return registry
