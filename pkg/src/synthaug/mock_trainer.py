"""Deterministic stand-in for a detector training/inference backend.

Implements the trainer adapter contract end to end without any learning:
`train` fingerprints the training manifest into a small weights file, and
`predict` emits the ground-truth boxes found next to each image (slightly
jittered, occasionally dropped, with seeded confidences). Miss probability
shrinks with training-set size so experiment curves look plausible. All
randomness is keyed by (weights fingerprint, image basename), which makes
whole matrix runs byte-identical across machines and working directories.

Run as `python -m synthaug.mock_trainer {train,predict} ...`.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from .io_utils import derive_seed, read_json, write_json


def _clamped_box(cx: float, cy: float, w: float, h: float) -> tuple[float, float, float, float]:
    w = min(max(w, 1e-3), 1.0)
    h = min(max(h, 1e-3), 1.0)
    cx = min(max(cx, w / 2), 1.0 - w / 2)
    cy = min(max(cy, h / 2), 1.0 - h / 2)
    return cx, cy, w, h


def _miss_probability(n_train: int) -> float:
    return float(min(max(0.45 - 0.04 * math.log2(max(n_train, 1)), 0.05), 0.45))


def cmd_train(args) -> int:
    manifest_path = Path(args.manifest)
    data = manifest_path.read_bytes()
    fingerprint = hashlib.sha256(data).hexdigest()
    n_train = len(read_json(manifest_path).get("records", []))
    # The aug preset is acknowledged but has no effect on the mock.
    _ = read_json(args.aug) if args.aug else {}
    write_json(args.out, {
        "kind": "mock-weights",
        "fingerprint": fingerprint,
        "n_train": n_train,
        "epochs": args.epochs,
    })
    return 0


def _predict_image(image_path: str, fingerprint: str, n_train: int) -> list[dict]:
    image_path = Path(image_path)
    label_path = image_path.with_suffix(".txt")
    if not label_path.exists():
        return []
    rng = np.random.default_rng(derive_seed(fingerprint, image_path.name, "predict"))
    p_miss = _miss_probability(n_train)
    detections = []
    for line in label_path.read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if len(parts) != 5:
            continue
        class_id = int(parts[0])
        cx, cy, w, h = (float(v) for v in parts[1:])
        if rng.random() < p_miss:
            continue
        jitter = rng.normal(0.0, 0.01, size=4)
        cx, cy, w, h = _clamped_box(cx + jitter[0], cy + jitter[1],
                                    w * (1 + jitter[2]), h * (1 + jitter[3]))
        detections.append({
            "class_id": class_id,
            "cx": cx, "cy": cy, "w": w, "h": h,
            "confidence": float(rng.uniform(0.3, 0.95)),
        })
    if rng.random() < 0.08:  # occasional spurious box
        w, h = rng.uniform(0.05, 0.3, size=2)
        cx = rng.uniform(w / 2, 1 - w / 2)
        cy = rng.uniform(h / 2, 1 - h / 2)
        detections.append({
            "class_id": 0,
            "cx": float(cx), "cy": float(cy), "w": float(w), "h": float(h),
            "confidence": float(rng.uniform(0.05, 0.4)),
        })
    return detections


def cmd_predict(args) -> int:
    weights = read_json(args.weights)
    if weights.get("kind") != "mock-weights":
        print("not a mock weights file", file=sys.stderr)
        return 2
    fingerprint = weights["fingerprint"]
    n_train = int(weights.get("n_train", 1))
    image_paths = [line.strip() for line in
                   Path(args.images).read_text(encoding="utf-8").splitlines()
                   if line.strip()]
    output = {p: _predict_image(p, fingerprint, n_train) for p in image_paths}
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    Path(args.output).write_text(json.dumps(output, indent=2, sort_keys=True) + "\n",
                                 encoding="utf-8")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="synthaug-mock-trainer",
                                     description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train")
    train.add_argument("--manifest", required=True)
    train.add_argument("--epochs", type=int, default=300)
    train.add_argument("--aug", default=None)
    train.add_argument("--out", required=True)
    train.set_defaults(func=cmd_train)

    predict = sub.add_parser("predict")
    predict.add_argument("--weights", required=True)
    predict.add_argument("--images", required=True)
    predict.add_argument("--output", required=True)
    predict.set_defaults(func=cmd_predict)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
