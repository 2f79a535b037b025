"""Source-dataset ingestion: COCO annotation JSON and Flickr30k-entities
style sentence/region files, both converted to manifests with relative
center/size boxes."""

from __future__ import annotations

import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

from .core import Annotation, BBox, DatasetManifest, ImageRecord
from .exceptions import ManifestLoadError
from .io_utils import read_json

logger = logging.getLogger(__name__)

PERSON_CLASS = "PERSON"
#: Flickr phrase-type tag whose phrases map to the PERSON class.
PEOPLE_PHRASE_TYPE = "people"


def _relative_box(x: float, y: float, w: float, h: float,
                  img_w: float, img_h: float) -> BBox | None:
    """Pixel corner box -> relative center/size, clipped to the unit square."""
    if w <= 0 or h <= 0 or img_w <= 0 or img_h <= 0:
        return None
    x0 = max(0.0, x) / img_w
    y0 = max(0.0, y) / img_h
    x1 = min(img_w, x + w) / img_w
    y1 = min(img_h, y + h) / img_h
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        return None
    return BBox(cx=(x0 + x1) / 2, cy=(y0 + y1) / 2, w=x1 - x0, h=y1 - y0)


# ---------------------------------------------------------------------------
# COCO


def load_coco(annotation_file: str | Path, images_root: str | Path = "",
              captions_file: str | Path | None = None,
              name: str = "coco") -> DatasetManifest:
    """Standard COCO instances JSON (images/annotations/categories arrays)."""
    try:
        data = read_json(annotation_file)
    except (OSError, ValueError) as exc:
        raise ManifestLoadError(f"cannot read COCO annotations: {exc}") from exc

    categories = sorted(data.get("categories", []), key=lambda c: c["id"])
    class_names = tuple(c["name"] for c in categories)
    class_index = {c["id"]: i for i, c in enumerate(categories)}

    captions: dict[int, str] = {}
    if captions_file is not None:
        cap_data = read_json(captions_file)
        for ann in cap_data.get("annotations", []):
            captions.setdefault(int(ann["image_id"]), ann.get("caption", "").strip())

    anns_by_image: dict[int, list[dict]] = {}
    for ann in data.get("annotations", []):
        anns_by_image.setdefault(int(ann["image_id"]), []).append(ann)

    images_root = Path(images_root)
    records = []
    for img in data.get("images", []):
        image_id = int(img["id"])
        width, height = int(img["width"]), int(img["height"])
        annotations = []
        for ann in anns_by_image.get(image_id, []):
            box = _relative_box(*ann["bbox"], img_w=width, img_h=height)
            if box is None:
                logger.warning("skipping degenerate box on image %s", image_id)
                continue
            annotations.append(Annotation(class_id=class_index[ann["category_id"]],
                                          bbox=box))
        records.append(ImageRecord(
            id=str(image_id),
            path=str(images_root / img["file_name"]),
            width=width, height=height,
            annotations=tuple(annotations),
            caption=captions.get(image_id, ""),
        ))
    return DatasetManifest(name=name, class_names=class_names, records=tuple(records))


# ---------------------------------------------------------------------------
# Flickr30k-entities style files


@dataclass(frozen=True, slots=True)
class PhraseEntity:
    entity_id: str
    types: tuple[str, ...]
    phrase: str


_ENTITY_RE = re.compile(r"\[/EN#(?P<id>\d+)(?P<types>(?:/[A-Za-z]+)+)\s+(?P<phrase>[^\]]*)\]")


def parse_flickr_sentence(line: str) -> tuple[str, list[PhraseEntity]]:
    """Split one annotated sentence into its plain caption and entities."""
    entities = []
    for m in _ENTITY_RE.finditer(line):
        entities.append(PhraseEntity(
            entity_id=m.group("id"),
            types=tuple(t for t in m.group("types").split("/") if t),
            phrase=m.group("phrase").strip(),
        ))
    caption = _ENTITY_RE.sub(lambda m: m.group("phrase").strip(), line)
    return " ".join(caption.split()), entities


def parse_flickr_regions(xml_file: str | Path) -> tuple[int, int, dict[str, list[tuple]]]:
    """Region file -> (width, height, entity_id -> [(xmin, ymin, xmax, ymax)])."""
    root = ET.parse(xml_file).getroot()
    size = root.find("size")
    width = int(size.findtext("width"))
    height = int(size.findtext("height"))
    boxes: dict[str, list[tuple]] = {}
    for obj in root.iter("object"):
        names = [n.text for n in obj.findall("name")]
        bndbox = obj.find("bndbox")
        if bndbox is None:
            continue
        corners = tuple(float(bndbox.findtext(k)) for k in ("xmin", "ymin", "xmax", "ymax"))
        for n in names:
            boxes.setdefault(n, []).append(corners)
    return width, height, boxes


def annotate_flickr(entities: list[PhraseEntity], regions: dict[str, list[tuple]],
                    width: int, height: int) -> tuple[Annotation, ...]:
    """People-typed phrases with linked region boxes become PERSON (class 0)
    annotations; phrases without a resolvable box are skipped with a log
    entry; all other phrase types are dropped."""
    annotations = []
    for entity in entities:
        if PEOPLE_PHRASE_TYPE not in entity.types:
            continue
        linked = regions.get(entity.entity_id)
        if not linked:
            logger.warning("people phrase %r (#%s) has no region box; skipped",
                           entity.phrase, entity.entity_id)
            continue
        for (x0, y0, x1, y1) in linked:
            box = _relative_box(x0, y0, x1 - x0, y1 - y0, width, height)
            if box is None:
                logger.warning("degenerate region for entity #%s; skipped",
                               entity.entity_id)
                continue
            annotations.append(Annotation(class_id=0, bbox=box))
    return tuple(annotations)


def load_flickr(sentences_dir: str | Path, annotations_dir: str | Path,
                images_root: str | Path = "", image_suffix: str = ".jpg",
                name: str = "flickr") -> DatasetManifest:
    sentences_dir = Path(sentences_dir)
    annotations_dir = Path(annotations_dir)
    images_root = Path(images_root)

    records = []
    for sentence_file in sorted(sentences_dir.glob("*.txt")):
        stem = sentence_file.stem
        xml_file = annotations_dir / f"{stem}.xml"
        if not xml_file.exists():
            logger.warning("no region file for %s; skipped", stem)
            continue
        first_line = ""
        for line in sentence_file.read_text(encoding="utf-8").splitlines():
            if line.strip():
                first_line = line.strip()
                break
        caption, entities = parse_flickr_sentence(first_line)
        width, height, regions = parse_flickr_regions(xml_file)
        records.append(ImageRecord(
            id=stem,
            path=str(images_root / f"{stem}{image_suffix}"),
            width=width, height=height,
            annotations=annotate_flickr(entities, regions, width, height),
            caption=caption,
        ))
    return DatasetManifest(name=name, class_names=(PERSON_CLASS,), records=tuple(records))
