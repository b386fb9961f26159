"""Stage functions behind the CLI: extract -> train -> score -> evaluate.

Each stage reads the previous stage's files from the output directory and writes a copy
of the resolved configuration next to its own outputs.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .completion import (ArchiveCompletionDataset, CompletionModelSpec, build_model,
                         checkpoint_name, load_checkpoint, patch_scores, predict,
                         save_checkpoint, train, write_run_metadata)
from .config import PipelineConfig
from .dataset_io import DetectionCache, load_frame_labels, load_manifest
from .evaluation import ReportRow, concatenated_roc, emit_report
from .events import EventArchive, EventArchiveWriter, ExtractionStats, iter_events
from .flow import FARNEBACK_PARAMS, FlowBackend
from .scoring import (EventScoreRecord, NormalizationStats, compute_normalization_stats,
                      finalize_records, frame_scores, fuse_records, read_scores, write_scores)

log = logging.getLogger(__name__)

SPLITS = ("train", "test")


class StageError(RuntimeError):
    """A stage's inputs are missing or inconsistent."""


def _echo_config(cfg: PipelineConfig, stage: str) -> None:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    (cfg.out_dir / f"config_{stage}.yaml").write_text(cfg.dump())


def archive_dir(cfg: PipelineConfig, split: str) -> Path:
    return cfg.out_dir / "events" / split


def model_dir(cfg: PipelineConfig) -> Path:
    return cfg.out_dir / "models"


def scores_path(cfg: PipelineConfig, split: str) -> Path:
    return cfg.out_dir / "scores" / f"{split}_scores.csv"


def stats_path(cfg: PipelineConfig) -> Path:
    return cfg.out_dir / "scores" / "stats.json"


def model_spec(cfg: PipelineConfig, kind: str, ie_type: int) -> CompletionModelSpec:
    c = cfg.cube
    return CompletionModelSpec(kind, ie_type, c.depth, c.height, c.width, cfg.widths)


def _detections(cfg: PipelineConfig) -> DetectionCache | None:
    path = cfg.path(cfg.raw["backend"]["detections"])
    if path is None:
        return None
    if not path.exists():
        raise StageError(f"detection cache {path} does not exist")
    return DetectionCache.read(path)


def extract(cfg: PipelineConfig, splits=SPLITS) -> dict[str, ExtractionStats]:
    """Write one event archive per split and return the extraction counts."""
    _echo_config(cfg, "extract")
    detections = _detections(cfg)
    if detections is None and cfg.mode != "motion_only":
        log.warning("no detection cache configured: appearance RoIs will be empty")
    out = {}
    for split in splits:
        manifest = load_manifest(cfg.manifest_path(split))
        videos = {v.video_id: manifest.open(v.video_id) for v in manifest.videos}
        flow = None
        if cfg.uses_flow:
            flow = FlowBackend(videos, cfg.path(cfg.raw["backend"]["flow_cache"]),
                               fallback=bool(cfg.raw["backend"]["flow_fallback"]))
        stats = ExtractionStats()
        writer = EventArchiveWriter(archive_dir(cfg, split), cfg.cube, with_flow=flow is not None)
        try:
            for stc, fc in iter_events(videos.values(), cfg.roi, cfg.cube, detections, flow,
                                       cfg.mode, stats):
                writer.add(stc, fc)
        finally:
            writer.close(extra={"stats": stats.as_dict(), "dataset": manifest.name,
                                "flow_fallback": FARNEBACK_PARAMS})
        if stats.events == 0:
            log.warning("%s split produced no events", split)
        out[split] = stats
    return out


def train_models(cfg: PipelineConfig) -> dict[str, list[str]]:
    """Train every (kind, type) network the ensemble needs; existing checkpoints are kept."""
    _echo_config(cfg, "train")
    adir = archive_dir(cfg, "train")
    try:
        archive = EventArchive.open(adir)
    except FileNotFoundError as exc:
        raise StageError(f"{exc}; run the extract stage first") from exc
    if archive.cfg != cfg.cube:
        raise StageError(f"archive cube {archive.cfg} differs from config {cfg.cube}")
    if len(archive) == 0:
        raise StageError("training archive holds no events")

    mdir = model_dir(cfg)
    mdir.mkdir(parents=True, exist_ok=True)
    trained, skipped, losses = [], [], {}
    for kind, ie_type in cfg.ensemble.models():
        path = mdir / checkpoint_name(cfg.dataset_name, kind, ie_type)
        if path.exists():
            skipped.append(path.name)
            continue
        spec = model_spec(cfg, kind, ie_type)
        model = build_model(spec, cfg.train.seed)
        result = train(model, ArchiveCompletionDataset(archive, kind, ie_type), cfg.train)
        save_checkpoint(path, model, result, cfg.train)
        trained.append(path.name)
        losses[path.name] = result.epoch_losses

    write_run_metadata(mdir / "train_meta.json", {
        "dataset": cfg.dataset_name,
        "train_config": asdict(cfg.train),
        "seed": cfg.train.seed,
        "events": len(archive),
        "trained": trained,
        "skipped": skipped,
        "epoch_losses": losses,
    })
    return {"trained": trained, "skipped": skipped}


def score_archive(cfg: PipelineConfig, archive: EventArchive, models: dict,
                  chunk: int = 1024) -> list[EventScoreRecord]:
    depth = archive.cfg.depth
    records = [EventScoreRecord(m.event_id, m.video_id, m.frame_index) for m in archive.meta]
    for (kind, ie_type), model in models.items():
        keep = [k for k in range(depth) if k != ie_type - 1]
        for start in range(0, len(archive), chunk):
            cubes = np.asarray(archive.cubes[start:start + chunk])
            generated = predict(model, cubes[:, keep], device=cfg.train.device)
            src = cubes if kind == "appearance" else np.asarray(archive.flows[start:start + chunk])
            scores = patch_scores(generated, src[:, ie_type - 1])
            for r, s in zip(records[start:start + chunk], scores):
                by_type = r.s_a_by_type if kind == "appearance" else r.s_m_by_type
                by_type[ie_type] = float(s)
    return finalize_records(records, cfg.ensemble)


def _load_models(cfg: PipelineConfig) -> dict:
    models = {}
    for kind, ie_type in cfg.ensemble.models():
        path = model_dir(cfg) / checkpoint_name(cfg.dataset_name, kind, ie_type)
        if not path.exists():
            raise StageError(f"missing checkpoint {path}; run the train stage first")
        model, payload = load_checkpoint(path)
        expected = model_spec(cfg, kind, ie_type)
        if model.spec != expected:
            raise StageError(f"checkpoint {path.name} has spec {model.spec}, config expects {expected}")
        models[(kind, ie_type)] = model
    return models


def score(cfg: PipelineConfig) -> NormalizationStats:
    """Score both splits; the training split yields the normalization statistics."""
    _echo_config(cfg, "score")
    models = _load_models(cfg)
    archives = {}
    for split in SPLITS:
        try:
            archives[split] = EventArchive.open(archive_dir(cfg, split))
        except FileNotFoundError as exc:
            raise StageError(f"{exc}; run the extract stage first") from exc
        if archives[split].cfg != cfg.cube:
            raise StageError(f"{split} archive cube {archives[split].cfg} differs from config")

    train_records = score_archive(cfg, archives["train"], models)
    stats = compute_normalization_stats(train_records, cfg.ensemble)
    stats_path(cfg).parent.mkdir(parents=True, exist_ok=True)
    stats.write(stats_path(cfg))
    for split in SPLITS:
        records = train_records if split == "train" else score_archive(cfg, archives[split], models)
        write_scores(scores_path(cfg, split), fuse_records(records, stats, cfg.ensemble))
    return stats


def evaluate(cfg: PipelineConfig, preset_label: str | None = None) -> ReportRow:
    _echo_config(cfg, "evaluate")
    manifest = load_manifest(cfg.manifest_path("test"))
    labels = load_frame_labels(manifest)
    path = scores_path(cfg, "test")
    if not path.exists():
        raise StageError(f"missing {path}; run the score stage first")
    records = read_scores(path)
    counts = {v.video_id: v.frame_count for v in manifest.videos}
    per_frame = frame_scores(records, counts)

    report_dir = cfg.out_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    with open(report_dir / "frame_scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("video_id", "frame_index", "score", "label"))
        for vid, values in per_frame.items():
            for k, (s, y) in enumerate(zip(values, labels[vid])):
                w.writerow((vid, k, repr(float(s)), int(y)))

    row = ReportRow(cfg.dataset_name, preset_label or cfg.ensemble.preset,
                    concatenated_roc(per_frame, labels))
    emit_report([row], report_dir)
    return row
