"""Subprocess contracts for external model backends.

Every heavyweight component (detector training, detector inference, neural
quality scorers) is reached through a file-based command-line contract so
any runtime can be wrapped without shared-memory assumptions:

  trainer:  <exe> train --manifest <path> --epochs <n> --aug <preset json> --out <weights>
  detector: <exe> predict --weights <path> --images <list file> --output <json>
  metric:   <exe> --image <path> --output <json path>     -> {"score": <real>}
"""

from __future__ import annotations

import json
import shlex
import subprocess
import sys
import tempfile
from pathlib import Path

from .exceptions import AdapterError, ContractError


def _as_command(command) -> list[str]:
    return shlex.split(command) if isinstance(command, str) else list(command)


def run_command(cmd: list[str], what: str) -> subprocess.CompletedProcess:
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise AdapterError(f"{what} exited with {proc.returncode}: {proc.stderr.strip()[:500]}",
                           command=cmd, returncode=proc.returncode, stderr=proc.stderr)
    return proc


def mock_trainer_command() -> list[str]:
    return [sys.executable, "-m", "synthaug.mock_trainer"]


class DetectorAdapter:
    """Runs the predict half of the trainer contract."""

    def __init__(self, command, max_parallelism: int = 1):
        self.command = _as_command(command)
        self.max_parallelism = max_parallelism

    def predict(self, weights_path: str | Path, image_paths) -> dict[str, list[dict]]:
        """Map image path -> list of {class_id, cx, cy, w, h, confidence}."""
        image_paths = [str(p) for p in image_paths]
        with tempfile.TemporaryDirectory(prefix="synthaug-predict-") as tmp:
            list_file = Path(tmp) / "images.txt"
            list_file.write_text("".join(p + "\n" for p in image_paths), encoding="utf-8")
            out_file = Path(tmp) / "detections.json"
            cmd = self.command + ["predict", "--weights", str(weights_path),
                                  "--images", str(list_file), "--output", str(out_file)]
            run_command(cmd, "detector predict")
            if not out_file.exists():
                raise ContractError("detector wrote no output JSON")
            try:
                data = json.loads(out_file.read_text(encoding="utf-8"))
            except ValueError as exc:
                raise ContractError(f"detector output is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ContractError("detector output must map image path to detections")
        missing = [p for p in image_paths if p not in data]
        if missing:
            raise ContractError(f"detector output missing {len(missing)} images "
                                f"(first: {missing[0]})")
        return data


class TrainerAdapter:
    """Runs the train half of the contract and exposes a DetectorAdapter."""

    def __init__(self, trainer_id: str, command, max_parallelism: int = 1):
        self.trainer_id = trainer_id
        self.command = _as_command(command)
        self.max_parallelism = max_parallelism
        self.detector = DetectorAdapter(self.command, max_parallelism)

    def train(self, manifest_path: str | Path, epochs: int, preset_params: dict,
              weights_out: str | Path) -> Path:
        weights_out = Path(weights_out)
        weights_out.parent.mkdir(parents=True, exist_ok=True)
        with tempfile.TemporaryDirectory(prefix="synthaug-train-") as tmp:
            aug_file = Path(tmp) / "aug.json"
            aug_file.write_text(json.dumps(preset_params, indent=2, sort_keys=True),
                                encoding="utf-8")
            cmd = self.command + ["train", "--manifest", str(manifest_path),
                                  "--epochs", str(epochs), "--aug", str(aug_file),
                                  "--out", str(weights_out)]
            run_command(cmd, f"trainer {self.trainer_id!r}")
        if not weights_out.exists():
            raise ContractError(f"trainer {self.trainer_id!r} wrote no weights file")
        return weights_out


class ExternalMetricAdapter:
    """Per-image quality scorer: `<exe> --image <path> --output <json>`."""

    def __init__(self, command):
        self.command = _as_command(command)

    def score(self, image_path: str | Path) -> float:
        with tempfile.TemporaryDirectory(prefix="synthaug-metric-") as tmp:
            out_file = Path(tmp) / "score.json"
            cmd = self.command + ["--image", str(image_path), "--output", str(out_file)]
            run_command(cmd, "metric backend")
            if not out_file.exists():
                raise ContractError("metric backend wrote no output JSON")
            try:
                data = json.loads(out_file.read_text(encoding="utf-8"))
            except ValueError as exc:
                raise ContractError(f"metric output is not valid JSON: {exc}") from exc
        if not isinstance(data, dict) or "score" not in data:
            raise ContractError('metric output must be {"score": <real>}')
        return float(data["score"])
