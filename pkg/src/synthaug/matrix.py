"""Experiment-matrix orchestration.

A matrix is the product spec x synthetic-count x seed, plus lower/upper
baseline cells per spec. Each cell builds its training manifest, invokes
the trainer adapter, runs prediction on the real-only test split, and
evaluates. Cells write into private directories under
``<out>/<matrix>/<spec-hash>/<cell>/`` so completed cells can be skipped on
rerun; the aggregate index is append-only under a file lock.

Every artifact is written with relative paths and stable key order, so a
whole matrix run is byte-identical across working directories when the
master seed and inputs match (with the default single worker; parallel runs
may interleave index lines).
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import data as data_mod
from . import ingest, sample
from .adapters import TrainerAdapter, mock_trainer_command
from .config import ExperimentSpec, PipelineConfig, preset, spec_hash
from .core import (DatasetManifest, SYNTHETIC, load_manifest, save_manifest,
                   write_label_file)
from .evaluation import BBox, Detection, EvalResult, evaluate
from .exceptions import ConfigError, MatrixError
from .extract import build_registry
from .generate import build_generator
from .io_utils import derive_seed, read_json, write_json
from .prompt import Vocabulary
from .quality import (BrisqueMetric, ConfidenceMetric, build_metric_registry,
                      load_surrogate_stats, score_pool)

logger = logging.getLogger(__name__)

BASELINE_LOWER = "baseline_lower"
BASELINE_UPPER = "baseline_upper"
MIX = "mix"

#: Fraction of failed cells above which the whole matrix errors.
FAILURE_LIMIT = 0.25


@dataclass(frozen=True, slots=True)
class Cell:
    spec: ExperimentSpec
    kind: str
    count: int
    seed: int

    @property
    def name(self) -> str:
        if self.kind == MIX:
            return f"mix-c{self.count}-s{self.seed}"
        return f"{self.kind}-s{self.seed}"


@dataclass(frozen=True)
class CellOutcome:
    cell: Cell
    spec_hash: str
    status: str
    eval_result: EvalResult | None = None
    error: str | None = None


@dataclass(frozen=True)
class RunResult:
    spec: ExperimentSpec
    spec_hash: str
    kind: str
    count: int
    evals: dict[int, EvalResult]
    mean_map50: float
    mean_map50_95: float
    std_map50: float
    std_map50_95: float


@dataclass
class SharedData:
    """Per-matrix artifacts shared by every cell."""

    lower: DatasetManifest
    upper: DatasetManifest
    val: DatasetManifest
    test: DatasetManifest
    pools: dict[str, DatasetManifest]
    selections: dict[tuple, list[str]]
    shared_dir: Path


def _load_source_manifest(config: PipelineConfig) -> DatasetManifest:
    ds = config.dataset
    source = ds.get("source", "manifest")
    if source == "manifest":
        path = ds.get("manifest")
        if not path:
            raise ConfigError("dataset.source 'manifest' needs dataset.manifest")
        return load_manifest(path)
    if source == "coco":
        return ingest.load_coco(ds["annotations"], ds.get("images_root", ""),
                                captions_file=ds.get("captions"))
    if source == "flickr":
        return ingest.load_flickr(ds["sentences_dir"], ds["annotations_dir"],
                                  ds.get("images_root", ""))
    raise ConfigError(f"unknown dataset source {source!r}")


def _trainer_adapter(config: PipelineConfig, trainer_id: str) -> TrainerAdapter:
    if trainer_id == "mock":
        return TrainerAdapter("mock", mock_trainer_command())
    for entry in config.trainer.get("external", ()):
        if entry.get("id") == trainer_id:
            return TrainerAdapter(trainer_id, entry["command"],
                                  max_parallelism=int(entry.get("max_parallelism", 1)))
    raise ConfigError(f"trainer {trainer_id!r} is not declared")


def prepare_shared(config: PipelineConfig, matrix_dir: Path,
                   master_seed: int) -> SharedData:
    """Filter the source, carve splits, build baselines and per-extractor
    synthetic pools, and export the test split for adapter consumption."""
    shared_dir = matrix_dir / "shared"
    source = _load_source_manifest(config)

    ds = config.dataset
    filter_spec = data_mod.SourceFilterSpec(
        class_name=ds.get("class_name", "PERSON"),
        min_area=float(ds.get("min_area", 0.05)),
        max_area=float(ds.get("max_area", 0.80)),
        max_instances=int(ds.get("max_instances", 1)))
    filtered = data_mod.filter_source(source, filter_spec)

    split_cfg = ds.get("split", {}) or {}
    fractions = (float(split_cfg.get("train", 0.70)),
                 float(split_cfg.get("val", 0.15)),
                 float(split_cfg.get("test", 0.15)))
    splits = data_mod.split_pool(filtered, derive_seed(master_seed, "split"),
                                 fractions)

    lower, upper = data_mod.build_baselines(
        splits["train"], derive_seed(master_seed, "baselines"),
        lower=int(ds.get("base_size", 250)), upper=int(ds.get("upper_size", 500)))

    save_manifest(lower, shared_dir / "baseline_lower.json")
    save_manifest(upper, shared_dir / "baseline_upper.json")
    save_manifest(splits["val"], shared_dir / "val.json")

    test = data_mod.export_split(splits["test"], shared_dir / "test")
    save_manifest(test, shared_dir / "test" / "manifest.json")

    registry = build_registry(config.extractor.get("canny"),
                              config.extractor.get("external", ()))
    generator = build_generator(config.generation)
    vocab_cfg = config.generation.get("vocabulary")
    if isinstance(vocab_cfg, (str, Path)):
        vocab = Vocabulary.from_json(vocab_cfg)
    elif vocab_cfg:
        vocab = Vocabulary(vocab_cfg)
    else:
        raise ConfigError("generation.vocabulary is required to build pools")
    per_image = int(config.generation.get("variants_per_image", 5))

    extractor_names = sorted({spec.extractor for spec in config.specs})
    pools: dict[str, DatasetManifest] = {}
    for name in extractor_names:
        pool_dir = shared_dir / "pools" / name
        result = data_mod.build_synthetic_pool(
            lower, registry[name], vocab, generator, pool_dir,
            master_seed=derive_seed(master_seed, "pool", name),
            variants_per_image=per_image)
        if result.failures:
            logger.warning("pool %s: %d source failures, shortfall %d",
                           name, len(result.failures), result.shortfall)
        for rec in result.manifest.records:
            write_label_file(rec, Path(rec.path).with_suffix(".txt"))
        save_manifest(result.manifest, pool_dir / "pool_manifest.json")
        write_json(pool_dir / "pool_report.json", {
            "target": result.target,
            "built": len(result.manifest.records),
            "failures": [[rid, reason] for rid, reason in result.failures],
        })
        pools[name] = result.manifest

    return SharedData(lower=lower, upper=upper, val=splits["val"], test=test,
                      pools=pools, selections={}, shared_dir=shared_dir)


def _selection_ids(config: PipelineConfig, shared: SharedData,
                   spec: ExperimentSpec, count: int, seed: int,
                   master_seed: int) -> list[str]:
    """Ordered pool ids for a mix cell; cached per (extractor, method, seed)."""
    method = spec.sampling
    pool = shared.pools[spec.extractor]
    cache_key = (spec.extractor, method, seed if method == "random" else None)
    if cache_key in shared.selections:
        return shared.selections[cache_key]

    pool_ids = pool.ids()
    if method == "random":
        ids = sample.random_select(pool_ids, len(pool_ids),
                                   derive_seed(master_seed, "select", spec.extractor, seed))
    elif method == "coreset":
        metric = BrisqueMetric(_surrogate_stats(config))
        embeddings = {rec.id: metric.embed(rec.path) for rec in pool.records}
        for rec in shared.lower.records:
            embeddings[rec.id] = metric.embed(rec.path)
        ids = sample.coreset_select(embeddings, shared.lower.ids(), pool_ids,
                                    len(pool_ids))
    elif method == "confidence":
        metric = _confidence_metric(config, shared)
        scored = score_pool(pool, metric,
                            float(config.metrics.get("failure_threshold", 0.5)))
        ids = sample.top_n(list(scored.records), len(scored.records),
                           metric.descriptor.polarity)
    else:
        registry = build_metric_registry(_surrogate_stats(config),
                                         config.metrics.get("external", ()))
        if method not in registry:
            raise ConfigError(f"sampling method {method!r} is not registered")
        metric = registry[method]
        scored = score_pool(pool, metric,
                            float(config.metrics.get("failure_threshold", 0.5)))
        ids = sample.top_n(list(scored.records), len(scored.records),
                           metric.descriptor.polarity)

    shared.selections[cache_key] = ids
    return ids


def _surrogate_stats(config: PipelineConfig):
    return load_surrogate_stats(config.metrics.get("pristine_stats"))


def _confidence_metric(config: PipelineConfig, shared: SharedData) -> ConfidenceMetric:
    """Model-aware scoring uses a detector trained once on the lower baseline."""
    scoring_dir = shared.shared_dir / "scoring"
    weights = scoring_dir / "weights.json"
    if not weights.exists():
        manifest_path = scoring_dir / "train_manifest.json"
        save_manifest(shared.lower, manifest_path)
        trainer = _trainer_adapter(config, config.trainer.get("id", "mock"))
        trainer.train(manifest_path, int(config.trainer.get("epochs", 300)),
                      preset("low").params, weights)
    trainer = _trainer_adapter(config, config.trainer.get("id", "mock"))
    return ConfidenceMetric(trainer.detector, weights,
                            target_class_id=int(config.metrics.get("target_class_id", 0)))


def _assert_split_purity(shared: SharedData) -> None:
    for split_name, manifest in (("val", shared.val), ("test", shared.test)):
        bad = [rec.id for rec in manifest.records if rec.provenance == SYNTHETIC]
        if bad:
            raise MatrixError(f"{split_name} split contains synthetic records: {bad[:3]}")


def run_cell(config: PipelineConfig, shared: SharedData, matrix_name: str,
             cell: Cell, cell_dir: Path, master_seed: int) -> CellOutcome:
    shash = spec_hash(cell.spec)
    cell_dir.mkdir(parents=True, exist_ok=True)
    _assert_split_purity(shared)

    if cell.kind == BASELINE_LOWER:
        train_manifest = shared.lower
    elif cell.kind == BASELINE_UPPER:
        train_manifest = shared.upper
    else:
        ids = _selection_ids(config, shared, cell.spec, cell.count, cell.seed,
                             master_seed)
        write_json(cell_dir / "selection.json", {
            "method": cell.spec.sampling,
            "count": cell.count,
            "seed": cell.seed,
            "ids": ids[: cell.count],
        })
        train_manifest = data_mod.mix(shared.lower, shared.pools[cell.spec.extractor],
                                      cell.count, ids)

    # Embed the cell identity in the manifest name: distinct cells then
    # fingerprint differently even when their record sets coincide.
    train_manifest = DatasetManifest(
        name=f"{matrix_name}-{shash}-{cell.name}",
        class_names=train_manifest.class_names,
        records=train_manifest.records)
    manifest_path = cell_dir / "train_manifest.json"
    save_manifest(train_manifest, manifest_path)

    trainer = _trainer_adapter(config, cell.spec.trainer)
    weights = trainer.train(manifest_path, cell.spec.epochs,
                            preset(cell.spec.aug_level).params,
                            cell_dir / "weights.json")

    test_paths = [rec.path for rec in shared.test.records]
    raw = trainer.detector.predict(weights, test_paths)

    by_id = {}
    detections = []
    for rec in shared.test.records:
        dets = raw.get(rec.path, [])
        by_id[rec.id] = dets
        for d in dets:
            detections.append(Detection(
                image_id=rec.id, class_id=int(d["class_id"]),
                bbox=BBox(float(d["cx"]), float(d["cy"]),
                          float(d["w"]), float(d["h"])),
                confidence=float(d["confidence"])))
    write_json(cell_dir / "detections.json", by_id)

    result = evaluate(detections, shared.test)
    write_json(cell_dir / "eval.json", result.to_dict())
    write_json(cell_dir / "status.json", {
        "status": "ok", "kind": cell.kind, "count": cell.count,
        "seed": cell.seed, "spec_hash": shash,
    })
    return CellOutcome(cell=cell, spec_hash=shash, status="ok", eval_result=result)


def build_cells(config: PipelineConfig) -> list[Cell]:
    cells = []
    for spec in config.specs:
        for seed in spec.seeds:
            cells.append(Cell(spec=spec, kind=BASELINE_LOWER, count=0, seed=seed))
            cells.append(Cell(spec=spec, kind=BASELINE_UPPER, count=0, seed=seed))
            for count in spec.counts:
                cells.append(Cell(spec=spec, kind=MIX, count=count, seed=seed))
    return cells


def run_matrix(config: PipelineConfig, out_root: str | Path, master_seed: int = 0,
               workers: int = 1, matrix_name: str | None = None
               ) -> tuple[list[RunResult], list[CellOutcome]]:
    """Execute every cell, skipping those already completed.

    Failed cells are recorded and the rest of the matrix continues; the run
    errors only when more than FAILURE_LIMIT of the cells failed. Returns
    (aggregated results, per-cell outcomes).
    """
    matrix_name = matrix_name or config.matrix.get("name", "matrix")
    matrix_dir = Path(out_root) / matrix_name
    matrix_dir.mkdir(parents=True, exist_ok=True)

    shared = prepare_shared(config, matrix_dir, master_seed)
    write_json(matrix_dir / "matrix.json", {
        "name": matrix_name,
        "master_seed": master_seed,
        "specs": [{"hash": spec_hash(s), "dataset": s.dataset,
                   "extractor": s.extractor, "sampling": s.sampling,
                   "aug_level": s.aug_level, "counts": list(s.counts),
                   "seeds": list(s.seeds), "trainer": s.trainer,
                   "epochs": s.epochs}
                  for s in config.specs],
    })

    cells = build_cells(config)
    index_path = matrix_dir / "index.jsonl"
    lock = FileLock(str(index_path) + ".lock")

    def execute(cell: Cell) -> CellOutcome:
        shash = spec_hash(cell.spec)
        cell_dir = matrix_dir / shash / cell.name
        status_file = cell_dir / "status.json"
        if status_file.exists():
            status = read_json(status_file)
            if status.get("status") == "ok":
                result = EvalResult.from_dict(read_json(cell_dir / "eval.json"))
                logger.info("cell %s/%s already complete; skipped", shash, cell.name)
                return CellOutcome(cell=cell, spec_hash=shash, status="skipped",
                                   eval_result=result)
        try:
            outcome = run_cell(config, shared, matrix_name, cell, cell_dir,
                               master_seed)
        except Exception as exc:
            logger.error("cell %s/%s failed: %s", shash, cell.name, exc)
            write_json(cell_dir / "status.json", {
                "status": "failed", "kind": cell.kind, "count": cell.count,
                "seed": cell.seed, "spec_hash": shash, "error": str(exc),
            })
            outcome = CellOutcome(cell=cell, spec_hash=shash, status="failed",
                                  error=str(exc))
        with lock:
            with open(index_path, "a", encoding="utf-8") as fh:
                entry = {"spec_hash": outcome.spec_hash, "cell": cell.name,
                         "status": "ok" if outcome.status == "skipped" else outcome.status}
                if outcome.eval_result is not None:
                    entry["map50"] = outcome.eval_result.map50
                    entry["map50_95"] = outcome.eval_result.map50_95
                import json as _json
                fh.write(_json.dumps(entry, sort_keys=True) + "\n")
        return outcome

    if workers <= 1:
        outcomes = [execute(cell) for cell in cells]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(execute, cells))

    failed = [o for o in outcomes if o.status == "failed"]
    results = aggregate_results(outcomes)
    if failed and len(failed) / len(outcomes) > FAILURE_LIMIT:
        raise MatrixError(f"{len(failed)} of {len(outcomes)} cells failed")
    return results, outcomes


def aggregate_results(outcomes: list[CellOutcome]) -> list[RunResult]:
    groups: dict[tuple, list[CellOutcome]] = {}
    for o in outcomes:
        if o.eval_result is None:
            continue
        groups.setdefault((o.spec_hash, o.cell.kind, o.cell.count), []).append(o)

    results = []
    for (shash, kind, count), members in sorted(groups.items()):
        evals = {m.cell.seed: m.eval_result for m in members}
        m50 = np.array([e.map50 for e in evals.values()])
        m5095 = np.array([e.map50_95 for e in evals.values()])
        results.append(RunResult(
            spec=members[0].cell.spec, spec_hash=shash, kind=kind, count=count,
            evals=evals,
            mean_map50=float(m50.mean()), mean_map50_95=float(m5095.mean()),
            std_map50=float(m50.std()), std_map50_95=float(m5095.std())))
    return results


# ---------------------------------------------------------------------------
# Reporting


def write_results_csv(results: list[RunResult], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["spec_hash", "dataset", "extractor", "sampling",
                         "aug_level", "kind", "count", "seed",
                         "map50", "map50_95"])
        for r in sorted(results, key=lambda r: (r.spec_hash, r.kind, r.count)):
            for seed in sorted(r.evals):
                e = r.evals[seed]
                writer.writerow([r.spec_hash, r.spec.dataset, r.spec.extractor,
                                 r.spec.sampling, r.spec.aug_level, r.kind,
                                 r.count, seed,
                                 f"{e.map50:.6f}", f"{e.map50_95:.6f}"])


def report(results: list[RunResult], out_dir: str | Path) -> list[Path]:
    """Emit one mAP-vs-synthetic-count chart per experiment family plus a
    CSV of every cell. Families fix (dataset, sampling, aug level); lines
    vary the extractor; horizontal lines mark the two real baselines."""
    if not results:
        raise ValueError("no results to report")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    csv_path = out_dir / "results.csv"
    write_results_csv(results, csv_path)
    written.append(csv_path)

    families: dict[tuple, list[RunResult]] = {}
    for r in results:
        families.setdefault((r.spec.dataset, r.spec.sampling, r.spec.aug_level),
                            []).append(r)

    for (dataset, sampling, aug_level), members in sorted(families.items()):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for extractor in sorted({m.spec.extractor for m in members}):
            points = sorted((m.count, m.mean_map50_95) for m in members
                            if m.kind == MIX and m.spec.extractor == extractor)
            if points:
                ax.plot([p[0] for p in points], [p[1] for p in points],
                        marker="o", label=extractor)
        for kind, label, style in ((BASELINE_LOWER, "baseline (lower)", "--"),
                                   (BASELINE_UPPER, "baseline (upper)", ":")):
            vals = [m.mean_map50_95 for m in members if m.kind == kind]
            if vals:
                ax.axhline(float(np.mean(vals)), linestyle=style, color="gray",
                           label=label)
        ax.set_xlabel("synthetic images added")
        ax.set_ylabel("mAP@[.5:.95]")
        ax.set_title(f"{dataset} / sampling={sampling} / aug={aug_level}")
        ax.legend(loc="lower right", fontsize=8)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        chart = out_dir / f"map_{dataset}_{sampling}_{aug_level}.png"
        fig.savefig(chart, dpi=110, metadata={"Software": "synthaug"})
        plt.close(fig)
        written.append(chart)
    return written
