"""Immutable domain types, manifest validation, and relative-coordinate
bounding-box arithmetic shared by every other module.

All geometry uses the center/size convention in relative coordinates:
``(cx, cy, w, h)`` as dimensionless fractions of image width/height.
Corner coordinates exist only at I/O boundaries of the evaluation module.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .exceptions import ManifestLoadError
from .io_utils import read_json, write_json

#: Absolute tolerance for float comparisons in geometric invariants.
GEOM_TOL = 1e-9

REAL = "real"
SYNTHETIC = "synthetic"


@dataclass(frozen=True, slots=True)
class BBox:
    """Axis-aligned box, center/size in fractions of the image dimensions."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name, v in (("cx", self.cx), ("cy", self.cy), ("w", self.w), ("h", self.h)):
            if not math.isfinite(v):
                raise ValueError(f"bbox {name} is not finite: {v!r}")
        # Degenerate boxes are rejected outright: area filters and IoU are
        # undefined on zero-extent boxes.
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"bbox has non-positive size: w={self.w}, h={self.h}")
        violations = bbox_violations(self.cx, self.cy, self.w, self.h)
        if violations:
            raise ValueError("; ".join(violations))

    def corners(self) -> tuple[float, float, float, float]:
        """Return (x0, y0, x1, y1) corner coordinates."""
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)


def bbox_violations(cx: float, cy: float, w: float, h: float) -> list[str]:
    """List invariant violations for raw box values (empty when valid)."""
    out = []
    if not (0 <= cx <= 1) or not (0 <= cy <= 1):
        out.append(f"bbox center out of range: cx={cx}, cy={cy}")
    if not (0 < w <= 1) or not (0 < h <= 1):
        out.append(f"bbox size out of range: w={w}, h={h}")
    else:
        if cx - w / 2 < -GEOM_TOL or cx + w / 2 > 1 + GEOM_TOL:
            out.append(f"bbox exceeds unit square horizontally: cx={cx}, w={w}")
        if cy - h / 2 < -GEOM_TOL or cy + h / 2 > 1 + GEOM_TOL:
            out.append(f"bbox exceeds unit square vertically: cy={cy}, h={h}")
    return out


def transpose_bbox(b: BBox) -> BBox:
    """Box geometry after an image transpose (axes swap in relative space)."""
    return BBox(cx=b.cy, cy=b.cx, w=b.h, h=b.w)


def bbox_relative_area(b: BBox) -> float:
    """Fraction of the image covered by the box, in (0, 1]."""
    return b.w * b.h


@dataclass(frozen=True, slots=True)
class Annotation:
    class_id: int
    bbox: BBox

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"class_id must be non-negative, got {self.class_id}")


@dataclass(frozen=True, slots=True)
class Lineage:
    """Provenance of a synthetic record back to its real source."""

    source_id: str
    extractor_name: str
    variant_index: int
    generator_seed: int


@dataclass(frozen=True, slots=True)
class ImageRecord:
    id: str
    path: str
    width: int
    height: int
    annotations: tuple[Annotation, ...] = ()
    caption: str = ""
    provenance: str = REAL
    lineage: Lineage | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"record {self.id!r} has non-positive dimensions")
        if self.provenance not in (REAL, SYNTHETIC):
            raise ValueError(f"record {self.id!r} has unknown provenance {self.provenance!r}")
        object.__setattr__(self, "annotations", tuple(self.annotations))


@dataclass(frozen=True, slots=True)
class DatasetManifest:
    name: str
    class_names: tuple[str, ...]
    records: tuple[ImageRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "records", tuple(self.records))

    def record_by_id(self, record_id: str) -> ImageRecord:
        for rec in self.records:
            if rec.id == record_id:
                return rec
        raise KeyError(record_id)

    def ids(self) -> list[str]:
        return [rec.id for rec in self.records]

    def provenance_counts(self) -> dict[str, int]:
        counts = {REAL: 0, SYNTHETIC: 0}
        for rec in self.records:
            counts[rec.provenance] = counts.get(rec.provenance, 0) + 1
        return counts

    def subset(self, ids: Iterable[str], name: str | None = None) -> "DatasetManifest":
        wanted = list(ids)
        by_id = {rec.id: rec for rec in self.records}
        return DatasetManifest(
            name=name or self.name,
            class_names=self.class_names,
            records=tuple(by_id[i] for i in wanted),
        )


@dataclass(frozen=True, slots=True)
class QualityRecord:
    image_id: str
    metric_name: str
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"quality score for {self.image_id!r} is not finite")


# ---------------------------------------------------------------------------
# Serialization


def manifest_to_dict(manifest: DatasetManifest, base_dir: str | Path | None = None) -> dict:
    """Plain-dict form of a manifest; paths relativized against base_dir."""
    records = []
    for rec in manifest.records:
        path = rec.path
        if base_dir is not None and os.path.isabs(path):
            path = Path(os.path.relpath(path, base_dir)).as_posix()
        entry = {
            "id": rec.id,
            "path": path,
            "width": rec.width,
            "height": rec.height,
            "caption": rec.caption,
            "provenance": rec.provenance,
            "annotations": [
                {"class_id": a.class_id,
                 "bbox": {"cx": a.bbox.cx, "cy": a.bbox.cy, "w": a.bbox.w, "h": a.bbox.h}}
                for a in rec.annotations
            ],
        }
        if rec.lineage is not None:
            entry["lineage"] = {
                "source_id": rec.lineage.source_id,
                "extractor_name": rec.lineage.extractor_name,
                "variant_index": rec.lineage.variant_index,
                "generator_seed": rec.lineage.generator_seed,
            }
        records.append(entry)
    return {"name": manifest.name, "class_names": list(manifest.class_names), "records": records}


def manifest_from_dict(data: dict, base_dir: str | Path | None = None) -> DatasetManifest:
    records = []
    for entry in data.get("records", []):
        annotations = tuple(
            Annotation(class_id=int(a["class_id"]),
                       bbox=BBox(**{k: float(v) for k, v in a["bbox"].items()}))
            for a in entry.get("annotations", [])
        )
        lineage = None
        if entry.get("lineage") is not None:
            ln = entry["lineage"]
            lineage = Lineage(source_id=ln["source_id"],
                              extractor_name=ln["extractor_name"],
                              variant_index=int(ln["variant_index"]),
                              generator_seed=int(ln["generator_seed"]))
        path = entry["path"]
        if base_dir is not None and not os.path.isabs(path):
            path = os.path.normpath(os.path.join(base_dir, path))
        records.append(ImageRecord(
            id=entry["id"], path=path,
            width=int(entry["width"]), height=int(entry["height"]),
            annotations=annotations, caption=entry.get("caption", ""),
            provenance=entry.get("provenance", REAL), lineage=lineage,
        ))
    return DatasetManifest(name=data["name"],
                           class_names=tuple(data.get("class_names", [])),
                           records=tuple(records))


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write a manifest as JSON with record paths relative to the file."""
    path = Path(path)
    write_json(path, manifest_to_dict(manifest, base_dir=path.parent))


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and strictly construct a manifest; bad files raise ManifestLoadError."""
    path = Path(path)
    try:
        data = read_json(path)
    except (OSError, ValueError) as exc:
        raise ManifestLoadError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(data, dict) or "name" not in data:
        raise ManifestLoadError(f"{path} is not a manifest document")
    return manifest_from_dict(data, base_dir=path.parent)


# ---------------------------------------------------------------------------
# Validation


def validate_manifest(manifest) -> list[str]:
    """Return every violated invariant of a manifest (empty list iff valid).

    Accepts a DatasetManifest, a plain dict, or a path to a manifest file.
    A file that cannot be read or parsed raises ManifestLoadError; content
    problems are reported, not raised.
    """
    if isinstance(manifest, (str, Path)):
        try:
            data = read_json(manifest)
        except (OSError, ValueError) as exc:
            raise ManifestLoadError(f"cannot read manifest {manifest}: {exc}") from exc
        if not isinstance(data, dict):
            raise ManifestLoadError(f"{manifest} is not a manifest document")
    elif isinstance(manifest, DatasetManifest):
        data = manifest_to_dict(manifest)
    else:
        data = manifest

    violations: list[str] = []
    class_names = data.get("class_names", [])
    records = data.get("records", [])

    seen_ids: set[str] = set()
    real_ids: set[str] = set()
    for entry in records:
        rid = entry.get("id", "<missing id>")
        if rid in seen_ids:
            violations.append(f"duplicate record id: {rid!r}")
        seen_ids.add(rid)
        if entry.get("provenance", REAL) == REAL:
            real_ids.add(rid)

    provenance_total = 0
    for entry in records:
        rid = entry.get("id", "<missing id>")
        if entry.get("width", 0) <= 0 or entry.get("height", 0) <= 0:
            violations.append(f"record {rid!r} has non-positive dimensions")
        provenance = entry.get("provenance", REAL)
        if provenance not in (REAL, SYNTHETIC):
            violations.append(f"record {rid!r} has unknown provenance {provenance!r}")
        else:
            provenance_total += 1
        for a in entry.get("annotations", []):
            cid = a.get("class_id", -1)
            if not (0 <= cid < len(class_names)):
                violations.append(f"record {rid!r} class_id {cid} outside declared class list")
            box = a.get("bbox", {})
            try:
                vals = (float(box["cx"]), float(box["cy"]), float(box["w"]), float(box["h"]))
            except (KeyError, TypeError, ValueError):
                violations.append(f"record {rid!r} has malformed bbox {box!r}")
                continue
            for msg in bbox_violations(*vals):
                violations.append(f"record {rid!r}: {msg}")
        lineage = entry.get("lineage")
        if provenance == SYNTHETIC:
            if lineage is None:
                violations.append(f"synthetic record {rid!r} has no lineage")
            elif lineage.get("source_id") not in real_ids:
                violations.append(
                    f"synthetic record {rid!r} has dangling lineage source "
                    f"{lineage.get('source_id')!r}")
        elif lineage is not None:
            violations.append(f"real record {rid!r} carries lineage")
    if provenance_total != len(records):
        violations.append("provenance counts do not sum to record count")
    return violations


# ---------------------------------------------------------------------------
# Label files (one text file per image: `class_id cx cy w h` per object)


def format_label_line(annotation: Annotation) -> str:
    b = annotation.bbox
    return (f"{annotation.class_id} "
            f"{b.cx:.10g} {b.cy:.10g} {b.w:.10g} {b.h:.10g}")


def write_label_file(record: ImageRecord, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [format_label_line(a) for a in record.annotations]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def write_label_files(manifest: DatasetManifest, directory: str | Path) -> list[Path]:
    """Write one label file per record, named `<record id>.txt`."""
    directory = Path(directory)
    paths = []
    for rec in manifest.records:
        p = directory / f"{rec.id}.txt"
        write_label_file(rec, p)
        paths.append(p)
    return paths


def parse_label_file(path: str | Path) -> list[Annotation]:
    annotations = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"malformed label line in {path}: {line!r}")
        cid, cx, cy, w, h = parts
        annotations.append(Annotation(class_id=int(cid),
                                      bbox=BBox(float(cx), float(cy), float(w), float(h))))
    return annotations


def with_provenance(record: ImageRecord, provenance: str,
                    lineage: Lineage | None = None) -> ImageRecord:
    return replace(record, provenance=provenance, lineage=lineage)
