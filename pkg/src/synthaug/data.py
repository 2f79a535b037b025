"""Dataset construction: source filtering, splits, baselines, the synthetic
pool, real/synthetic mixing, and ablation sets that match a mixed dataset's
size by duplicating real images."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import (Annotation, DatasetManifest, ImageRecord, REAL,
                   write_label_file)
from .exceptions import ConfigError
from .extract import save_feature
from .generate import GenerationRequest, build_synthetic_record, generate
from .io_utils import derive_seed, load_png, save_png, write_json
from .prompt import Vocabulary, apply_variant, pool_variant_indices

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class SourceFilterSpec:
    class_name: str = "PERSON"
    min_area: float = 0.05
    max_area: float = 0.80
    max_instances: int = 1

    def __post_init__(self):
        if not (0 < self.min_area < self.max_area <= 1):
            raise ValueError(
                f"areas must satisfy 0 < min < max <= 1, got "
                f"[{self.min_area}, {self.max_area}]")
        if self.max_instances < 1:
            raise ValueError("max_instances must be at least 1")


def filter_source(manifest: DatasetManifest, spec: SourceFilterSpec) -> DatasetManifest:
    """Keep records with exactly one in-range instance of the target class.

    Matching is case-insensitive on the class name. Annotations of other
    classes are dropped from kept records, and the result is a single-class
    manifest (class id 0). Idempotent: filtering twice equals filtering once.
    """
    target = None
    for i, cname in enumerate(manifest.class_names):
        if cname.lower() == spec.class_name.lower():
            target = i
            break
    if target is None:
        raise ConfigError(f"class {spec.class_name!r} not in manifest classes "
                          f"{manifest.class_names}")

    kept = []
    for rec in manifest.records:
        matches = [a for a in rec.annotations if a.class_id == target]
        if not (1 <= len(matches) <= spec.max_instances):
            continue
        areas_ok = all(spec.min_area <= a.bbox.w * a.bbox.h <= spec.max_area
                       for a in matches)
        if not areas_ok:
            continue
        kept.append(replace(rec, annotations=tuple(
            Annotation(class_id=0, bbox=a.bbox) for a in matches)))
    return DatasetManifest(name=f"{manifest.name}-{spec.class_name.lower()}",
                           class_names=(manifest.class_names[target],),
                           records=tuple(kept))


def split_pool(manifest: DatasetManifest, seed: int,
               fractions: tuple[float, float, float] = (0.70, 0.15, 0.15),
               ) -> dict[str, DatasetManifest]:
    """Carve train/val/test once, before any baseline or mix is built.

    Validation and test splits are drawn from real records only and never
    receive synthetic data later in the pipeline.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    ids = sorted(manifest.ids())
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n = len(order)
    n_val = int(round(n * fractions[1]))
    n_test = int(round(n * fractions[2]))
    n_train = n - n_val - n_test
    parts = {
        "train": order[:n_train],
        "val": order[n_train:n_train + n_val],
        "test": order[n_train + n_val:],
    }
    return {split: manifest.subset(part, name=f"{manifest.name}-{split}")
            for split, part in parts.items()}


def build_baselines(manifest: DatasetManifest, seed: int,
                    lower: int = 250, upper: int = 500,
                    ) -> tuple[DatasetManifest, DatasetManifest]:
    """Nested baselines: the lower set is a strict subset of the upper."""
    if lower >= upper:
        raise ValueError(f"lower baseline size {lower} must be below upper {upper}")
    if len(manifest.records) < upper:
        raise ValueError(f"need at least {upper} filtered records, "
                         f"have {len(manifest.records)}")
    ids = sorted(manifest.ids())
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    upper_ids = order[:upper]
    lower_m = manifest.subset(upper_ids[:lower], name=f"{manifest.name}-base{lower}")
    upper_m = manifest.subset(upper_ids, name=f"{manifest.name}-base{upper}")
    return lower_m, upper_m


# ---------------------------------------------------------------------------
# Synthetic pool


@dataclass(frozen=True, slots=True)
class PoolBuildResult:
    manifest: DatasetManifest
    target: int
    failures: tuple[tuple[str, str], ...]  # (source id, reason)

    @property
    def shortfall(self) -> int:
        return self.target - len(self.manifest.records)


def build_synthetic_pool(base: DatasetManifest, extractor, vocab: Vocabulary,
                         generator, out_dir: str | Path, master_seed: int,
                         variants_per_image: int = 5,
                         save_features: bool = False) -> PoolBuildResult:
    """Generate `variants_per_image` synthetic records per base record.

    Per-image failures (unreadable source, missing caption, backend errors)
    are logged and reported as a shortfall against the target size instead
    of aborting the pool.
    """
    out_dir = Path(out_dir)
    image_dir = out_dir / "synthetic"
    image_dir.mkdir(parents=True, exist_ok=True)

    records: list[ImageRecord] = []
    failures: list[tuple[str, str]] = []
    backend_id = generator.descriptor.backend_id

    for rec in base.records:
        try:
            if not rec.caption:
                raise ValueError("record has no caption to rewrite")
            feature = extractor.extract_path(rec.path, source_id=rec.id)
            if save_features:
                feature = save_feature(feature, out_dir / "features" / f"{rec.id}.png")
            indices = pool_variant_indices(rec.caption, vocab, variants_per_image)
            for ordinal, j in enumerate(indices, start=1):
                variant = apply_variant(rec.caption, vocab, j)
                seed = derive_seed(master_seed, rec.id, j)
                raster, _meta = generate(generator, GenerationRequest(
                    feature=feature, prompt=variant.text, seed=seed,
                    backend_id=backend_id))
                record_id = f"{rec.id}_s{ordinal}"
                png_path = image_dir / f"{record_id}.png"
                save_png(png_path, raster)
                synth = build_synthetic_record(rec, variant, raster,
                                               extractor.descriptor, seed,
                                               str(png_path), record_id)
                write_json(png_path.with_suffix(".lineage.json"), {
                    "source_id": rec.id,
                    "extractor_name": extractor.descriptor.name,
                    "variant_index": variant.variant_index,
                    "generator_seed": seed,
                    "prompt": variant.text,
                    "backend_id": backend_id,
                })
                records.append(synth)
        except Exception as exc:
            logger.warning("pool generation failed for %s: %s", rec.id, exc)
            failures.append((rec.id, str(exc)))

    pool = DatasetManifest(name=f"{base.name}-pool",
                           class_names=base.class_names,
                           records=tuple(records))
    target = len(base.records) * variants_per_image
    if failures:
        logger.warning("pool shortfall: built %d of %d (%d sources failed)",
                       len(records), target, len(failures))
    return PoolBuildResult(manifest=pool, target=target, failures=tuple(failures))


# ---------------------------------------------------------------------------
# Mixing and ablation


def mix(base: DatasetManifest, pool: DatasetManifest, n: int,
        selected_ids=None, name: str | None = None) -> DatasetManifest:
    """Base records verbatim plus n synthetic records from the pool.

    `selected_ids` fixes the order of preference (a sampler output); by
    default the pool's own order is used.
    """
    if n > len(pool.records):
        raise ValueError(f"cannot mix {n} synthetic images from a pool of "
                         f"{len(pool.records)}")
    ids = list(selected_ids) if selected_ids is not None else pool.ids()
    if n > len(ids):
        raise ValueError(f"selection provides {len(ids)} ids, need {n}")
    chosen = pool.subset(ids[:n])
    return DatasetManifest(
        name=name or f"{base.name}+syn{n}",
        class_names=base.class_names,
        records=tuple(base.records) + tuple(chosen.records))


def build_ablation(base: DatasetManifest, total_size: int, seed: int,
                   name: str | None = None) -> DatasetManifest:
    """Match a target size by duplicating real records round-robin.

    Every base record appears at least once; duplicates carry fresh ids but
    share the source image path, keeping provenance strictly real.
    """
    n = len(base.records)
    if total_size < n:
        raise ValueError(f"ablation size {total_size} is below the base size {n}")
    rng = np.random.default_rng(seed)
    order = [base.records[i] for i in rng.permutation(n)]
    records = list(base.records)
    extra = total_size - n
    for i in range(extra):
        src = order[i % n]
        copy_round = i // n + 1
        records.append(replace(src, id=f"{src.id}~dup{copy_round}",
                               provenance=REAL, lineage=None))
    return DatasetManifest(name=name or f"{base.name}-ablation{total_size}",
                           class_names=base.class_names,
                           records=tuple(records))


def export_split(manifest: DatasetManifest, out_dir: str | Path) -> DatasetManifest:
    """Copy a split's images next to their label files for adapter use.

    Detector adapters locate ground truth as `<image>.txt` beside each
    image, so the export writes `<id>.png` + `<id>.txt` pairs and returns a
    manifest pointing at the copies.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for rec in manifest.records:
        dst = out_dir / f"{rec.id}.png"
        if not dst.exists():
            save_png(dst, load_png(rec.path))
        write_label_file(rec, out_dir / f"{rec.id}.txt")
        records.append(replace(rec, path=str(dst)))
    return DatasetManifest(name=manifest.name, class_names=manifest.class_names,
                           records=tuple(records))
