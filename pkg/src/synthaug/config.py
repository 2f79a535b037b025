"""Experiment configuration: augmentation presets, experiment specs, and
strict config-file loading (YAML or TOML, unknown keys rejected)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

from .exceptions import ConfigError

AUG_LEVELS = ("low", "medium", "high")

# Detector-side augmentation settings forwarded verbatim to the trainer.
# low: geometric/color basics plus mosaic. medium adds shear up to +/-5
# degrees, rotation up to +/-10 degrees, and 10% copy-paste. high keeps the
# same setting with copy-paste and mixup both at 20%.
_LOW = {
    "scale": 0.5, "translate": 0.1,
    "hsv_h": 0.015, "hsv_s": 0.7, "hsv_v": 0.4,
    "mosaic": 1.0,
    "shear": 0.0, "degrees": 0.0,
    "copy_paste": 0.0, "mixup": 0.0,
}
_MEDIUM = {**_LOW, "shear": 5.0, "degrees": 10.0, "copy_paste": 0.10}
_HIGH = {**_MEDIUM, "copy_paste": 0.20, "mixup": 0.20}
_PRESETS = {"low": _LOW, "medium": _MEDIUM, "high": _HIGH}

_PROBABILITY_KEYS = ("mosaic", "copy_paste", "mixup")


@dataclass(frozen=True, slots=True)
class AugmentationPreset:
    name: str
    params: dict

    def __post_init__(self):
        for key in _PROBABILITY_KEYS:
            p = self.params.get(key, 0.0)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{key} probability {p} outside [0, 1]")


def preset(level: str) -> AugmentationPreset:
    if level not in _PRESETS:
        raise ConfigError(f"unknown augmentation level {level!r}; "
                          f"expected one of {AUG_LEVELS}")
    return AugmentationPreset(name=level, params=dict(_PRESETS[level]))


@dataclass(frozen=True, slots=True)
class ExperimentSpec:
    dataset: str
    extractor: str
    counts: tuple[int, ...]
    sampling: str
    aug_level: str
    seeds: tuple[int, ...]
    trainer: str
    epochs: int = 300

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ValueError("spec needs at least one seed")
        if any(c < 0 for c in self.counts):
            raise ValueError("synthetic counts must be non-negative")


def spec_hash(spec: ExperimentSpec) -> str:
    """Stable short hash of a spec; invariant to config-file key order."""
    payload = {
        "dataset": spec.dataset, "extractor": spec.extractor,
        "counts": list(spec.counts), "sampling": spec.sampling,
        "aug_level": spec.aug_level, "seeds": list(spec.seeds),
        "trainer": spec.trainer, "epochs": spec.epochs,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


_SECTION_KEYS = {
    "dataset": {"source", "manifest", "root", "annotations", "captions",
                "sentences_dir", "annotations_dir", "images_root",
                "class_name", "min_area", "max_area", "max_instances",
                "base_size", "upper_size", "split", "seed"},
    "extractor": {"name", "canny", "external"},
    "generation": {"backend", "variants_per_image", "vocabulary", "external"},
    "metrics": {"pristine_stats", "external", "failure_threshold",
                "target_class_id"},
    "sampling": {"method", "rounds", "increment", "tie_break", "rescore", "seed"},
    "matrix": {"name", "counts", "extractors", "sampling", "aug_levels",
               "seeds", "workers", "ablation_sizes"},
    "trainer": {"id", "command", "epochs", "external"},
}

_CANNY_KEYS = {"sigma", "low", "high"}


@dataclass(frozen=True)
class PipelineConfig:
    dataset: dict
    extractor: dict
    generation: dict
    metrics: dict
    sampling: dict
    matrix: dict
    trainer: dict
    specs: tuple[ExperimentSpec, ...]
    path: str | None = None


def _reject_unknown(section: str, data: dict) -> None:
    allowed = _SECTION_KEYS[section]
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in section {section!r}")


def _read_config_file(path: str | Path) -> dict:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(text)
        return yaml.safe_load(text) or {}
    except Exception as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


def registered_names(config: "PipelineConfig") -> dict[str, set[str]]:
    """Names resolvable from a config: extractors, sampling methods, trainers."""
    extractors = {"canny", "threshold_mask", "false_segmentation"}
    extractors |= {e["name"] for e in config.extractor.get("external", ())}
    metrics = {"brisque", "coreset", "confidence"}
    metrics |= {e["name"] for e in config.metrics.get("external", ())}
    trainers = {"mock"}
    trainers |= {e["id"] for e in config.trainer.get("external", ())}
    return {"extractors": extractors,
            "sampling": metrics | {"random"},
            "trainers": trainers}


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and validate a config file into experiment specs.

    The matrix section is a product over extractors x sampling methods x
    augmentation levels, each cell sharing the counts and seeds lists.
    """
    raw = _read_config_file(path)
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")
    for key in raw:
        if key not in _SECTION_KEYS:
            raise ConfigError(f"unknown top-level key {key!r}")

    sections = {name: dict(raw.get(name, {}) or {}) for name in _SECTION_KEYS}
    for name, data in sections.items():
        _reject_unknown(name, data)
    for key in sections["extractor"].get("canny", {}) or {}:
        if key not in _CANNY_KEYS:
            raise ConfigError(f"unknown key {key!r} in section 'extractor.canny'")

    config = PipelineConfig(
        dataset=sections["dataset"], extractor=sections["extractor"],
        generation=sections["generation"], metrics=sections["metrics"],
        sampling=sections["sampling"], matrix=sections["matrix"],
        trainer=sections["trainer"], specs=(), path=str(path))

    names = registered_names(config)
    dataset_source = config.dataset.get("source", "manifest")
    if dataset_source not in ("coco", "flickr", "manifest"):
        raise ConfigError(f"unknown dataset source {dataset_source!r}")

    matrix = config.matrix
    extractors = matrix.get("extractors") or [config.extractor.get("name", "canny")]
    sampling_methods = matrix.get("sampling") or [config.sampling.get("method", "random")]
    aug_levels = matrix.get("aug_levels") or ["low"]
    seeds = tuple(matrix.get("seeds") or [0])
    counts = tuple(matrix.get("counts") or [])
    trainer_id = config.trainer.get("id", "mock")
    epochs = int(config.trainer.get("epochs", 300))

    for name in extractors:
        if name not in names["extractors"]:
            raise ConfigError(f"extractor {name!r} is not registered")
    for method in sampling_methods:
        if method not in names["sampling"]:
            raise ConfigError(f"sampling method {method!r} is not registered")
    for level in aug_levels:
        if level not in AUG_LEVELS:
            raise ConfigError(f"unknown augmentation level {level!r}")
    if trainer_id not in names["trainers"]:
        raise ConfigError(f"trainer {trainer_id!r} is not registered")

    base_size = int(config.dataset.get("base_size", 250))
    per_image = int(config.generation.get("variants_per_image", 5))
    pool_size = base_size * per_image
    for count in counts:
        if count > pool_size:
            raise ConfigError(f"synthetic count {count} exceeds the pool size "
                              f"{pool_size} ({base_size} x {per_image})")

    specs = tuple(
        ExperimentSpec(dataset=dataset_source, extractor=extractor,
                       counts=counts, sampling=method, aug_level=level,
                       seeds=seeds, trainer=trainer_id, epochs=epochs)
        for extractor in extractors
        for method in sampling_methods
        for level in aug_levels)
    return PipelineConfig(
        dataset=config.dataset, extractor=config.extractor,
        generation=config.generation, metrics=config.metrics,
        sampling=config.sampling, matrix=config.matrix,
        trainer=config.trainer, specs=specs, path=str(path))
