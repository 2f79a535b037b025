"""Synthetic image generation behind a backend interface.

The mock backend is fully deterministic: the output raster is pseudo-random
noise keyed by (feature bytes, prompt, seed) with the conditioning feature
blended in at half intensity, so downstream tests can both reproduce pools
byte-for-byte and detect conditioning mix-ups. Real diffusion backends are
reached through a file-based subprocess contract and stay outside the test
surface.
"""

from __future__ import annotations

import hashlib
import json
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Annotation, ImageRecord, Lineage, SYNTHETIC, transpose_bbox
from .exceptions import AdapterError, ConfigError, ContractError
from .extract import ExtractorDescriptor, FeatureImage, save_feature
from .io_utils import load_png
from .prompt import CaptionVariant

MOCK = "mock"
EXTERNAL = "external"


@dataclass(frozen=True, slots=True)
class GeneratorDescriptor:
    backend_id: str
    kind: str
    supported_features: tuple[str, ...] = ("*",)

    def supports(self, extractor_name: str) -> bool:
        return "*" in self.supported_features or extractor_name in self.supported_features


@dataclass(frozen=True)
class GenerationRequest:
    feature: FeatureImage
    prompt: str
    seed: int
    backend_id: str
    controlnet_id: str | None = None


class MockGenerator:
    def __init__(self):
        self.descriptor = GeneratorDescriptor(MOCK, MOCK, ("*",))
        self.max_parallelism = 0

    def generate(self, request: GenerationRequest) -> tuple[np.ndarray, dict]:
        feature = request.feature
        px = np.asarray(feature.pixels)
        key = hashlib.sha256()
        key.update(px.tobytes())
        key.update(repr(px.shape).encode())
        key.update(request.prompt.encode("utf-8"))
        key.update(str(request.seed).encode())
        rng = np.random.default_rng(int.from_bytes(key.digest()[:8], "big"))

        h, w = px.shape[0], px.shape[1]
        noise = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint16)
        if px.ndim == 2:
            cond = px.astype(np.uint16)[:, :, None]
        else:
            cond = px[:, :, :3].astype(np.uint16)
        raster = ((noise + cond) // 2).astype(np.uint8)
        meta = {"backend_id": self.descriptor.backend_id, "seed": request.seed,
                "prompt": request.prompt}
        return raster, meta


class ExternalGenerator:
    """`<exe> --request <request.json>`; the request carries the feature
    path, prompt, seed, controlnet id, and the output path to write."""

    def __init__(self, backend_id: str, command, controlnet_id: str | None = None,
                 supported_features: tuple[str, ...] = ("*",), max_parallelism: int = 1):
        self.descriptor = GeneratorDescriptor(backend_id, EXTERNAL,
                                              tuple(supported_features))
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.controlnet_id = controlnet_id
        self.max_parallelism = max_parallelism

    def generate(self, request: GenerationRequest) -> tuple[np.ndarray, dict]:
        feature = request.feature
        with tempfile.TemporaryDirectory(prefix="synthaug-generate-") as tmp:
            tmp = Path(tmp)
            if feature.path is None:
                feature = save_feature(feature, tmp / "feature.png")
            out_path = tmp / "generated.png"
            request_file = tmp / "request.json"
            request_file.write_text(json.dumps({
                "feature_path": feature.path,
                "prompt": request.prompt,
                "seed": request.seed,
                "controlnet_id": request.controlnet_id or self.controlnet_id,
                "output_path": str(out_path),
            }, indent=2, sort_keys=True), encoding="utf-8")

            cmd = self.command + ["--request", str(request_file)]
            proc = subprocess.run(cmd, capture_output=True, text=True)
            if proc.returncode != 0:
                raise AdapterError(
                    f"generator {self.descriptor.backend_id!r} exited with {proc.returncode}",
                    command=cmd, returncode=proc.returncode, stderr=proc.stderr)
            if not out_path.exists():
                raise ContractError(
                    f"generator {self.descriptor.backend_id!r} wrote no output image")
            raster = load_png(out_path)

        if (raster.shape[0], raster.shape[1]) != (feature.height, feature.width):
            raise ContractError(
                f"generator output {raster.shape[:2]} does not match feature "
                f"dimensions {(feature.height, feature.width)}")
        meta = {"backend_id": self.descriptor.backend_id, "seed": request.seed,
                "prompt": request.prompt}
        return raster, meta


def generate(generator, request: GenerationRequest) -> tuple[np.ndarray, dict]:
    """Run one generation request after checking feature-kind support."""
    if not generator.descriptor.supports(request.feature.extractor_name):
        raise ConfigError(
            f"backend {generator.descriptor.backend_id!r} does not support "
            f"{request.feature.extractor_name!r} features")
    raster, meta = generator.generate(request)
    if (raster.shape[0], raster.shape[1]) != (request.feature.height, request.feature.width):
        raise ContractError("generated raster dimensions differ from the feature")
    return raster, meta


def carry_labels(source: ImageRecord,
                 extractor: ExtractorDescriptor) -> tuple[Annotation, ...]:
    """Labels conserved from the source; transposed when the extractor
    transposes geometry."""
    if not extractor.transposes_geometry:
        return tuple(source.annotations)
    return tuple(Annotation(class_id=a.class_id, bbox=transpose_bbox(a.bbox))
                 for a in source.annotations)


def build_synthetic_record(source: ImageRecord, variant: CaptionVariant,
                           raster: np.ndarray, extractor: ExtractorDescriptor,
                           seed: int, path: str, record_id: str) -> ImageRecord:
    return ImageRecord(
        id=record_id,
        path=path,
        width=int(raster.shape[1]),
        height=int(raster.shape[0]),
        annotations=carry_labels(source, extractor),
        caption=variant.text,
        provenance=SYNTHETIC,
        lineage=Lineage(source_id=source.id,
                        extractor_name=extractor.name,
                        variant_index=variant.variant_index,
                        generator_seed=seed),
    )


def build_generator(config: dict | None):
    """Instantiate the configured backend (defaults to the mock)."""
    config = config or {}
    backend = config.get("backend", MOCK)
    if backend == MOCK:
        return MockGenerator()
    for entry in config.get("external", ()):
        if entry.get("id") == backend:
            return ExternalGenerator(
                backend, entry["command"],
                controlnet_id=entry.get("controlnet_id"),
                supported_features=tuple(entry.get("supported_features", ("*",))),
                max_parallelism=int(entry.get("max_parallelism", 1)))
    raise ConfigError(f"generation backend {backend!r} is not declared")
