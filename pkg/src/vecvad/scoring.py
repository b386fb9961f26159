"""Event scores: IE-type ensemble, normalized modality fusion, and frame aggregation."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

PRESETS = ("vec-a", "vec-am", "custom")


@dataclass
class EventScoreRecord:
    event_id: int
    video_id: str
    frame_index: int
    s_a_by_type: dict[int, float] = field(default_factory=dict)
    s_m_by_type: dict[int, float] = field(default_factory=dict)
    S_a: float = 0.0
    S_m: float = 0.0
    S: float = 0.0


@dataclass(frozen=True)
class NormalizationStats:
    mean_a: float
    std_a: float
    mean_m: float
    std_m: float

    def __post_init__(self):
        if not (self.std_a > 0 and self.std_m > 0):
            raise ValueError("normalization standard deviations must be positive")

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.__dict__, indent=2) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "NormalizationStats":
        return cls(**json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class EnsembleConfig:
    w_a: float = 1.0
    w_m: float = 1.0
    appearance_types: frozenset[int] = frozenset(range(1, 6))
    motion_types: frozenset[int] = frozenset(range(1, 6))
    preset: str = "vec-am"

    def __post_init__(self):
        object.__setattr__(self, "appearance_types", frozenset(self.appearance_types))
        object.__setattr__(self, "motion_types", frozenset(self.motion_types))
        if self.preset not in PRESETS:
            raise ValueError(f"preset must be one of {PRESETS}, got {self.preset!r}")
        if self.w_a < 0 or self.w_m < 0 or not (self.w_a > 0 or self.w_m > 0):
            raise ValueError("weights must be >= 0 with at least one positive")
        if self.w_a > 0 and not self.appearance_types:
            raise ValueError("appearance weight is positive but no appearance types are set")
        if self.w_m > 0 and not self.motion_types:
            raise ValueError("motion weight is positive but no motion types are set")

    @classmethod
    def from_preset(cls, preset: str, depth: int = 5, w_a: float = 1.0, w_m: float = 1.0,
                    appearance_types: Iterable[int] | None = None,
                    motion_types: Iterable[int] | None = None) -> "EnsembleConfig":
        """``vec-a``: all types for appearance, type ``depth`` only for motion.
        ``vec-am``: all types for both. ``custom`` takes the explicit type sets."""
        every = frozenset(range(1, depth + 1))
        if preset == "vec-a":
            return cls(w_a, w_m, every, frozenset({depth}), preset)
        if preset == "vec-am":
            return cls(w_a, w_m, every, every, preset)
        if preset == "custom":
            return cls(w_a, w_m,
                       frozenset(appearance_types if appearance_types is not None else every),
                       frozenset(motion_types if motion_types is not None else every), preset)
        raise ValueError(f"preset must be one of {PRESETS}, got {preset!r}")

    def models(self) -> list[tuple[str, int]]:
        """(kind, ie_type) pairs that need a trained network; zero-weight modalities are skipped."""
        pairs = []
        if self.w_a > 0:
            pairs += [("appearance", i) for i in sorted(self.appearance_types)]
        if self.w_m > 0:
            pairs += [("motion", i) for i in sorted(self.motion_types)]
        return pairs


def ie_type_ensemble(scores_by_type: Mapping[int, float], types: Iterable[int]) -> float:
    types = sorted(set(types))
    if not types:
        raise ValueError("IE-type ensemble needs at least one type")
    missing = [t for t in types if t not in scores_by_type]
    if missing:
        raise KeyError(f"no scores for IE types {missing}")
    return float(sum(scores_by_type[t] for t in types) / len(types))


def modality_ensemble(S_a: float, S_m: float, stats: NormalizationStats,
                      cfg: EnsembleConfig) -> float:
    return (cfg.w_a * (S_a - stats.mean_a) / stats.std_a
            + cfg.w_m * (S_m - stats.mean_m) / stats.std_m)


def compute_normalization_stats(records: Sequence[EventScoreRecord],
                                cfg: EnsembleConfig | None = None) -> NormalizationStats:
    """Population mean/std of S_a and S_m over normal training events.

    A modality with zero weight in ``cfg`` is unused downstream and gets (0, 1).
    """
    if len(records) < 2:
        raise ValueError(f"need at least 2 training events for normalization, got {len(records)}")
    out = {}
    for name, attr, weight in (("a", "S_a", cfg.w_a if cfg else 1.0),
                               ("m", "S_m", cfg.w_m if cfg else 1.0)):
        if weight == 0:
            out[f"mean_{name}"], out[f"std_{name}"] = 0.0, 1.0
            continue
        values = np.array([getattr(r, attr) for r in records], dtype=np.float64)
        std = float(values.std())
        if not std > 0:
            raise ValueError(
                f"{attr} has zero variance over {len(values)} training events; "
                "use a larger training sample"
            )
        out[f"mean_{name}"], out[f"std_{name}"] = float(values.mean()), std
    return NormalizationStats(**out)


def finalize_records(records: Iterable[EventScoreRecord], cfg: EnsembleConfig) -> list[EventScoreRecord]:
    """Fill S_a and S_m from the per-type maps."""
    records = list(records)
    for r in records:
        r.S_a = ie_type_ensemble(r.s_a_by_type, cfg.appearance_types) if cfg.w_a > 0 else 0.0
        r.S_m = ie_type_ensemble(r.s_m_by_type, cfg.motion_types) if cfg.w_m > 0 else 0.0
    return records


def fuse_records(records: Iterable[EventScoreRecord], stats: NormalizationStats,
                 cfg: EnsembleConfig) -> list[EventScoreRecord]:
    records = list(records)
    for r in records:
        r.S = modality_ensemble(r.S_a, r.S_m, stats, cfg)
    return records


def frame_scores(records: Iterable[EventScoreRecord],
                 frame_counts: Mapping[str, int]) -> dict[str, np.ndarray]:
    """Per-video frame scores in [0, 1].

    A frame takes the max fused score of events anchored at it; frames without events
    take the video's minimum event score (0 without any events). Each video is then
    min-max normalized. When that range is zero, frames holding events map to 1 and the
    rest to 0, so a lone event still stands out and an event-free video is all zeros.
    """
    grouped: dict[str, dict[int, float]] = {vid: {} for vid in frame_counts}
    for r in records:
        if r.video_id not in grouped:
            raise KeyError(f"score record for unknown video {r.video_id!r}")
        if not 0 <= r.frame_index < frame_counts[r.video_id]:
            raise IndexError(f"frame {r.frame_index} out of range for video {r.video_id!r}")
        per = grouped[r.video_id]
        per[r.frame_index] = max(per.get(r.frame_index, -np.inf), r.S)

    out = {}
    for vid, n in frame_counts.items():
        per = grouped[vid]
        fill = min(per.values()) if per else 0.0
        s = np.full(n, fill, dtype=np.float64)
        for idx, value in per.items():
            s[idx] = value
        lo, hi = (s.min(), s.max()) if n else (0.0, 0.0)
        if hi > lo:
            out[vid] = (s - lo) / (hi - lo)
        else:
            out[vid] = np.zeros(n)
            out[vid][list(per)] = 1.0
    return out


# -- files ------------------------------------------------------------------------------

_SCORE_FIELDS = ("video_id", "frame_index", "event_id", "S_a", "S_m", "S")


def write_scores(path: str | Path, records: Iterable[EventScoreRecord]) -> None:
    """CSV with one row per event; floats use ``repr`` so reading back is lossless."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_SCORE_FIELDS)
        for r in records:
            w.writerow((r.video_id, r.frame_index, r.event_id, repr(float(r.S_a)),
                        repr(float(r.S_m)), repr(float(r.S))))


def read_scores(path: str | Path) -> list[EventScoreRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != _SCORE_FIELDS:
            raise ValueError(f"{path}: expected columns {_SCORE_FIELDS}")
        for row in reader:
            records.append(EventScoreRecord(
                event_id=int(row["event_id"]), video_id=row["video_id"],
                frame_index=int(row["frame_index"]), S_a=float(row["S_a"]),
                S_m=float(row["S_m"]), S=float(row["S"]),
            ))
    return records
