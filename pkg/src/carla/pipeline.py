"""End-to-end driver: normalise -> pretext -> neighbours -> selfsup -> score -> evaluate.

Per-entity artefacts land in ``<out>/<entity>/``; the benchmark report and
run manifest in ``<out>/``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from carla import _backend
from carla.config import RunConfig, apply_switch, derive_seed, dump_config, to_dict
from carla.dataset import (
    BenchmarkEntity,
    NormStats,
    load_benchmark,
    normalize,
    window_array,
)
from carla.encoder import EncoderConfig, load_checkpoint, save_checkpoint
from carla.errors import CarlaError, DataError
from carla.evaluate import EvalReport, benchmark_report, random_scores, write_report
from carla.infer import label_from_probs, project_scores, read_scores, write_labels, write_scores
from carla.pretext import (
    NeighborPool,
    load_neighbors,
    mine_neighbors,
    save_neighbors,
    separation_fraction,
    train_pretext,
    triplet_distances,
    write_loss_history,
)
from carla.selfsup import predict_proba, train_selfsup

log = logging.getLogger(__name__)

STAGES = ("pretext", "selfsup", "all")


def set_deterministic(enabled: bool) -> None:
    if enabled:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    else:
        torch.use_deterministic_algorithms(False)


class StageError(CarlaError):
    """Wraps a failure with the stage and entity it happened in."""

    def __init__(self, stage: str, entity: str, cause: Exception):
        super().__init__(f"[{stage}] entity {entity!r}: {cause}")
        self.stage, self.entity, self.cause = stage, entity, cause
        self.exit_code = getattr(cause, "exit_code", 1)


@dataclass
class EntityRun:
    name: str
    directory: Path
    scores: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    majority: Optional[int] = None
    class_counts: Optional[list[int]] = None
    pretext_loss: list[float] = field(default_factory=list)
    selfsup_loss: list[float] = field(default_factory=list)
    mean_d_ap: Optional[float] = None
    mean_d_an: Optional[float] = None
    triplet_separation: Optional[float] = None
    n_triplets: Optional[int] = None
    timings: dict = field(default_factory=dict)


def _prepare(entity: BenchmarkEntity, config: RunConfig):
    ws = config.data.window_size
    for split, length in (("train", entity.train.length), ("test", entity.test.series.length)):
        if ws > length:
            raise DataError(f"entity {entity.name!r}: window size {ws} exceeds {split} length {length}")
    stats = NormStats.from_series(entity.train)
    train = normalize(entity.train, stats)
    test = normalize(entity.test.series, stats)
    windows = window_array(train, ws, config.data.stride)
    enc = EncoderConfig(
        input_dims=entity.train.dims,
        window_size=ws,
        kernel_sizes=list(config.encoder.kernel_sizes),
        channels=list(config.encoder.channels),
        rep_dim=config.encoder.rep_dim,
    )
    return stats, train, test, windows, enc


def _staged(stage: str, name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except CarlaError as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(stage, name, exc) from exc
    except (ValueError, ArithmeticError, RuntimeError, OSError) as exc:
        raise StageError(stage, name, exc) from exc


def run_pretext_stage(entity: BenchmarkEntity, config: RunConfig, out: Path, run: EntityRun):
    stats, _, _, windows, enc = _prepare(entity, config)
    seed = derive_seed(config.seed, "pretext", entity.name)
    pcfg = dataclasses.replace(config.pretext, seed=seed)
    t0 = time.perf_counter()
    res = train_pretext(windows, pcfg, enc)
    run.timings["pretext_train_s"] = time.perf_counter() - t0
    run.pretext_loss = res.loss_history
    d_ap, d_an = triplet_distances(res.model, res.triplets)
    run.mean_d_ap, run.mean_d_an = float(d_ap.mean()), float(d_an.mean())
    run.triplet_separation = separation_fraction(d_ap, d_an)
    run.n_triplets = len(d_ap)
    t0 = time.perf_counter()
    nearest, furthest = mine_neighbors(res.model, res.pool, config.selfsup.num_neighbors)
    run.timings["neighbors_s"] = time.perf_counter() - t0
    save_checkpoint(out / "pretext.ckpt", res.model, "pretext", seed=seed, epoch=pcfg.epochs,
                    extra={"triplet_separation": run.triplet_separation,
                           "mean_d_ap": run.mean_d_ap, "mean_d_an": run.mean_d_an})
    write_loss_history(out / "loss_history.csv", res.loss_history)
    save_neighbors(out / "neighbors.json", nearest, furthest, res.pool)
    res.pool.save(out / "pool.npz")
    (out / "norm.json").write_text(json.dumps(stats.to_dict()))
    return res.model, res.pool, nearest, furthest


def _load_pretext(entity: BenchmarkEntity, config: RunConfig, out: Path):
    _, _, _, windows, _ = _prepare(entity, config)
    for name in ("pretext.ckpt", "neighbors.json", "pool.npz"):
        if not (out / name).is_file():
            raise DataError(f"missing pretext artefact {out / name}; run the pretext stage first")
    model, _ = load_checkpoint(out / "pretext.ckpt")
    nearest, furthest, _ = load_neighbors(out / "neighbors.json")
    pool = NeighborPool.load(out / "pool.npz", windows)
    return model, pool, nearest, furthest


def run_selfsup_stage(entity, config, out, run, pretext=None):
    model, pool, nearest, furthest = pretext or _load_pretext(entity, config, out)
    seed = derive_seed(config.seed, "selfsup", entity.name)
    scfg = dataclasses.replace(config.selfsup, seed=seed)
    t0 = time.perf_counter()
    res = train_selfsup(model, pool, nearest, furthest, scfg)
    run.timings["selfsup_train_s"] = time.perf_counter() - t0
    run.selfsup_loss = res.loss_history
    run.majority = res.assignment.majority
    run.class_counts = res.assignment.counts.tolist()
    save_checkpoint(out / "selfsup.ckpt", res.model, "selfsup", seed=seed, epoch=scfg.epochs,
                    extra={"num_classes": scfg.num_classes, "majority_class": run.majority,
                           "class_counts": run.class_counts})
    write_loss_history(out / "selfsup_loss_history.csv", res.loss_history)
    return res.model


def detect_entity(entity: BenchmarkEntity, config: RunConfig, out: Path, model=None, majority=None):
    """Score the test split with the stage-two checkpoint; writes scores.csv/labels.csv."""
    if model is None:
        if not (out / "selfsup.ckpt").is_file():
            raise DataError(f"missing {out / 'selfsup.ckpt'}; run the selfsup stage first")
        model, header = load_checkpoint(out / "selfsup.ckpt")
        majority = int(header["extra"]["majority_class"])
    ws = config.data.window_size
    stats = NormStats.from_series(entity.train)
    test = normalize(entity.test.series, stats)
    if test.length < ws:
        raise DataError(f"entity {entity.name!r}: window size {ws} exceeds test length {test.length}")
    probs = predict_proba(model, window_array(test, ws, 1))
    scores = np.clip(project_scores(1.0 - probs[:, majority], test.length, ws, config.data.projection), 0.0, 1.0)
    win_labels = label_from_probs(probs, majority)
    labels = project_scores(win_labels.astype(np.float64), test.length, ws, "causal").astype(np.int8)
    write_scores(out / "scores.csv", scores)
    write_labels(out / "labels.csv", labels)
    return scores, labels


def run_entity(entity: BenchmarkEntity, config: RunConfig, stage: str = "all",
               out_root: Optional[Path] = None, detect: bool = True) -> EntityRun:
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}")
    out = Path(out_root or config.out) / entity.name
    out.mkdir(parents=True, exist_ok=True)
    run = EntityRun(entity.name, out)
    pretext = None
    if stage in ("pretext", "all"):
        pretext = _staged("pretext", entity.name, run_pretext_stage, entity, config, out, run)
        if stage == "pretext":
            return run
    model = _staged("selfsup", entity.name, run_selfsup_stage, entity, config, out, run, pretext)
    if detect:
        t0 = time.perf_counter()
        run.scores, run.labels = _staged("detect", entity.name, detect_entity, entity, config, out,
                                         model, run.majority)
        run.timings["detect_s"] = time.perf_counter() - t0
    return run


def evaluate_runs(entities: Sequence[BenchmarkEntity], config: RunConfig, out_root: Path,
                  scores: Optional[Sequence[np.ndarray]] = None) -> tuple[EvalReport, EvalReport]:
    """Evaluate model scores (read from disk unless given) and the random baseline."""
    if scores is None:
        scores = [_staged("eval", e.name, read_scores, out_root / e.name / "scores.csv") for e in entities]
    names = [e.name for e in entities]
    labels = [e.test.labels for e in entities]
    for e, s in zip(entities, scores):
        if len(s) != e.test.series.length:
            raise StageError("eval", e.name, DataError(f"{len(s)} scores for {e.test.series.length} test points"))
    report = _staged("eval", "*", benchmark_report, names, labels, scores)
    baseline_scores = [random_scores(len(y), derive_seed(config.seed, "random", n)) for n, y in zip(names, labels)]
    baseline = _staged("eval", "*", benchmark_report, names, labels, baseline_scores)
    return report, baseline


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _input_hashes(data_path: Optional[str]) -> dict:
    if not data_path:
        return {}
    root = Path(data_path)
    files = sorted(p for p in root.rglob("*") if p.is_file() and p.suffix in (".csv", ".json"))
    return {str(p.relative_to(root)): file_digest(p) for p in files}


def write_manifest(out_root: Path, config: RunConfig, runs: Sequence[EntityRun], stage: str,
                   started: float) -> Path:
    manifest = {
        "config": to_dict(config),
        "stage": stage,
        "kernel_backend": _backend.BACKEND,
        "torch": torch.__version__,
        "python": platform.python_version(),
        "inputs": _input_hashes(config.data.path),
        "entities": {
            r.name: {
                "directory": str(r.directory),
                "checkpoints": sorted(p.name for p in r.directory.glob("*.ckpt")),
                "majority_class": r.majority,
                "class_counts": r.class_counts,
                "triplet_separation": r.triplet_separation,
                "n_triplets": r.n_triplets,
                "mean_d_ap": r.mean_d_ap,
                "mean_d_an": r.mean_d_an,
                "timings": r.timings,
            }
            for r in runs
        },
        "wall_time_s": time.perf_counter() - started,
    }
    path = out_root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


@dataclass
class PipelineResult:
    runs: list[EntityRun]
    report: Optional[EvalReport] = None
    baseline: Optional[EvalReport] = None
    out: Optional[Path] = None


def run_pipeline(config: RunConfig, stage: str = "all",
                 entities: Optional[Sequence[BenchmarkEntity]] = None,
                 evaluate: bool = True) -> PipelineResult:
    started = time.perf_counter()
    set_deterministic(config.deterministic)
    if entities is None:
        if not config.data.path:
            raise DataError("no data path configured")
        entities = load_benchmark(config.data.path)
    out_root = Path(config.out)
    out_root.mkdir(parents=True, exist_ok=True)
    dump_config(config, out_root / "config.yaml")
    runs = []
    for entity in entities:
        log.info("entity %s: stage %s", entity.name, stage)
        runs.append(run_entity(entity, config, stage, out_root))
    result = PipelineResult(runs, out=out_root)
    if stage == "all" and evaluate:
        report, baseline = evaluate_runs(entities, config, out_root, [r.scores for r in runs])
        write_report(report, out_root, baseline=baseline)
        result.report, result.baseline = report, baseline
    write_manifest(out_root, config, runs, stage, started)
    return result


def run_ablation(config: RunConfig, switches: Sequence[str],
                 entities: Optional[Sequence[BenchmarkEntity]] = None) -> dict[str, EvalReport]:
    """One full run per switch (plus the unmodified reference) with shared seeds."""
    variants = {"reference": config}
    for sw in switches:
        variants[sw] = apply_switch(config, sw)
    if entities is None:
        entities = load_benchmark(config.data.path)
    root = Path(config.out)
    reports = {}
    for name, cfg in variants.items():
        slug = name.replace(":", "-")
        cfg = dataclasses.replace(cfg, out=str(root / "ablate" / slug))
        reports[name] = run_pipeline(cfg, "all", entities).report
    lines = ["| Variant | Prec | Rec | F1 | AU-PR (mean ± std) |", "|---|---|---|---|---|"]
    for name, rep in reports.items():
        p = rep.pooled
        lines.append(f"| {name} | {p['precision']:.4f} | {p['recall']:.4f} | {p['f1']:.4f} | "
                     f"{rep.aupr_mean:.4f} ± {rep.aupr_std:.4f} |")
    (root / "ablation.md").write_text("# Ablation\n\n" + "\n".join(lines) + "\n")
    (root / "ablation.json").write_text(json.dumps({k: v.to_dict() for k, v in reports.items()}, indent=2))
    return reports
