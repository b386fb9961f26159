"""Spatio-temporal cubes (video events), their flow cubes, and incomplete events."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .dataset_io import DetectionCache, VideoSequence, crop_resize, temporal_gradient
from .flow import FlowBackend, extract_flow_patches
from .roi import BoundingBox, RoiConfig, extract_rois

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CubeConfig:
    height: int = 32
    width: int = 32
    depth: int = 5

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.depth < 2:
            raise ValueError("cube needs height, width >= 1 and depth >= 2")


@dataclass
class SpatioTemporalCube:
    patches: np.ndarray  # D x H x W x 3, float32 in [0, 1], chronological
    box: BoundingBox
    video_id: str
    last_frame_index: int
    event_id: int

    @property
    def depth(self) -> int:
        return self.patches.shape[0]


@dataclass
class FlowCube:
    flow_patches: np.ndarray  # D x H x W x 2, aligned with the cube's patches
    event_id: int


@dataclass
class IncompleteEvent:
    context: np.ndarray  # (D-1) x H x W x 3
    erased_index: int  # 1-based
    event_id: int


def build_stc(
    video: VideoSequence,
    box: BoundingBox,
    t: int,
    cfg: CubeConfig,
    event_id: int = 0,
    flow: FlowBackend | None = None,
) -> tuple[SpatioTemporalCube, FlowCube | None] | None:
    """Cube of the ``depth`` patches under ``box`` ending at frame ``t``.

    Returns ``None`` when fewer than ``depth - 1`` frames precede ``t``.
    """
    first = t - cfg.depth + 1
    if first < 0:
        return None
    patches = np.stack([
        crop_resize(video.pixels(k), box, cfg.height, cfg.width) / 255.0
        for k in range(first, t + 1)
    ]).astype(np.float32)
    stc = SpatioTemporalCube(patches, box, video.video_id, t, event_id)
    if flow is None:
        return stc, None
    flows = np.stack([
        extract_flow_patches(flow.get_flow(video.video_id, k), box, cfg.height, cfg.width)
        for k in range(first, t + 1)
    ])
    return stc, FlowCube(flows, event_id)


def erase_patch(stc: SpatioTemporalCube, i: int) -> tuple[IncompleteEvent, np.ndarray]:
    """Remove the ``i``-th patch (1-based); returns the incomplete event and the removed patch."""
    depth = stc.patches.shape[0]
    if not 1 <= i <= depth:
        raise ValueError(f"erased index must be in 1..{depth}, got {i}")
    context = np.delete(stc.patches, i - 1, axis=0)
    return IncompleteEvent(context, i, stc.event_id), stc.patches[i - 1].copy()


def reinsert(ie: IncompleteEvent, target: np.ndarray) -> np.ndarray:
    return np.insert(ie.context, ie.erased_index - 1, target, axis=0)


@dataclass
class ExtractionStats:
    frames: int = 0
    appearance_rois: int = 0
    motion_rois: int = 0
    skipped_history: int = 0
    events: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def iter_video_events(
    video: VideoSequence,
    roi_cfg: RoiConfig,
    cube_cfg: CubeConfig,
    detections: DetectionCache | None = None,
    flow: FlowBackend | None = None,
    mode: str = "both",
    stats: ExtractionStats | None = None,
    first_event_id: int = 0,
) -> Iterator[tuple[SpatioTemporalCube, FlowCube | None]]:
    stats = stats if stats is not None else ExtractionStats()
    event_id = first_event_id
    prev = None
    for frame in video:
        grad = temporal_gradient(frame, prev) if prev is not None else None
        prev = frame
        dets = detections.get(video.video_id, frame.index) if detections is not None else []
        rois = extract_rois(frame, grad, dets, roi_cfg, mode)
        stats.frames += 1
        for box in rois:
            if box.source == "appearance":
                stats.appearance_rois += 1
            else:
                stats.motion_rois += 1
            built = build_stc(video, box, frame.index, cube_cfg, event_id, flow)
            if built is None:
                stats.skipped_history += 1
                continue
            stats.events += 1
            event_id += 1
            yield built


def iter_events(
    videos: Iterable[VideoSequence],
    roi_cfg: RoiConfig,
    cube_cfg: CubeConfig,
    detections: DetectionCache | None = None,
    flow: FlowBackend | None = None,
    mode: str = "both",
    stats: ExtractionStats | None = None,
) -> Iterator[tuple[SpatioTemporalCube, FlowCube | None]]:
    """Events of every video in order; event ids are unique across the whole run."""
    stats = stats if stats is not None else ExtractionStats()
    for video in videos:
        yield from iter_video_events(video, roi_cfg, cube_cfg, detections, flow, mode,
                                     stats, first_event_id=stats.events)


def enumerate_training_set(
    videos: Iterable[VideoSequence],
    roi_cfg: RoiConfig,
    cube_cfg: CubeConfig,
    ie_types: Iterable[int],
    detections: DetectionCache | None = None,
    flow: FlowBackend | None = None,
    mode: str = "both",
    stats: ExtractionStats | None = None,
) -> Iterator[tuple[IncompleteEvent, np.ndarray, np.ndarray | None]]:
    """``(incomplete event, appearance target, flow target)`` per event and requested type.

    ``stats.events`` holds the number of cubes once the stream is exhausted.
    """
    types = sorted(set(ie_types))
    for t in types:
        if not 1 <= t <= cube_cfg.depth:
            raise ValueError(f"IE type {t} outside 1..{cube_cfg.depth}")
    for stc, fc in iter_events(videos, roi_cfg, cube_cfg, detections, flow, mode, stats):
        for i in types:
            ie, target = erase_patch(stc, i)
            yield ie, target, (fc.flow_patches[i - 1] if fc is not None else None)


# -- on-disk archive --------------------------------------------------------------------

ARCHIVE_FORMAT = "vecvad-events/1"
_META_FIELDS = ("event_id", "video_id", "frame_index", "x1", "y1", "x2", "y2", "source")


class EventArchiveWriter:
    """Streams cubes into ``<dir>/cubes.f32`` (and ``flows.f32``) plus ``events.csv``;
    ``header.json`` with (H, W, D, N) is written on close."""

    def __init__(self, directory: str | Path, cfg: CubeConfig, with_flow: bool):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.with_flow = with_flow
        self.count = 0
        self._cubes = open(self.directory / "cubes.f32", "wb")
        self._flows = open(self.directory / "flows.f32", "wb") if with_flow else None
        self._meta_fh = open(self.directory / "events.csv", "w", newline="")
        self._meta = csv.writer(self._meta_fh)
        self._meta.writerow(_META_FIELDS)

    def add(self, stc: SpatioTemporalCube, fc: FlowCube | None) -> None:
        cfg = self.cfg
        if stc.patches.shape != (cfg.depth, cfg.height, cfg.width, 3):
            raise ValueError(f"cube shape {stc.patches.shape} does not match archive {cfg}")
        self._cubes.write(np.ascontiguousarray(stc.patches, dtype="<f4").tobytes())
        if self._flows is not None:
            if fc is None:
                raise ValueError("archive expects flow cubes")
            self._flows.write(np.ascontiguousarray(fc.flow_patches, dtype="<f4").tobytes())
        b = stc.box
        self._meta.writerow((stc.event_id, stc.video_id, stc.last_frame_index,
                             b.x1, b.y1, b.x2, b.y2, b.source))
        self.count += 1

    def close(self, extra: Mapping | None = None) -> None:
        for fh in (self._cubes, self._flows, self._meta_fh):
            if fh is not None:
                fh.close()
        header = {"format": ARCHIVE_FORMAT, "H": self.cfg.height, "W": self.cfg.width,
                  "D": self.cfg.depth, "N": self.count, "flow": self.with_flow}
        if extra:
            header["extra"] = dict(extra)
        (self.directory / "header.json").write_text(json.dumps(header, indent=2))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class EventMeta:
    event_id: int
    video_id: str
    frame_index: int
    box: BoundingBox


@dataclass
class EventArchive:
    directory: Path
    cfg: CubeConfig
    cubes: np.ndarray
    flows: np.ndarray | None
    meta: list[EventMeta] = field(default_factory=list)
    header: dict = field(default_factory=dict)

    @classmethod
    def open(cls, directory: str | Path) -> "EventArchive":
        directory = Path(directory)
        header_path = directory / "header.json"
        if not header_path.exists():
            raise FileNotFoundError(f"no event archive at {directory}")
        header = json.loads(header_path.read_text())
        if header.get("format") != ARCHIVE_FORMAT:
            raise ValueError(f"{directory}: unknown archive format {header.get('format')!r}")
        cfg = CubeConfig(header["H"], header["W"], header["D"])
        n = header["N"]

        def mapped(name, channels):
            shape = (n, cfg.depth, cfg.height, cfg.width, channels)
            if n == 0:
                return np.zeros(shape, dtype=np.float32)
            return np.memmap(directory / name, dtype="<f4", mode="r", shape=shape)

        cubes = mapped("cubes.f32", 3)
        flows = mapped("flows.f32", 2) if header["flow"] else None
        meta = []
        with open(directory / "events.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                box = BoundingBox(int(row["x1"]), int(row["y1"]), int(row["x2"]), int(row["y2"]),
                                  row["source"])
                meta.append(EventMeta(int(row["event_id"]), row["video_id"],
                                      int(row["frame_index"]), box))
        if len(meta) != n:
            raise ValueError(f"{directory}: {len(meta)} metadata rows for N={n}")
        return cls(directory, cfg, cubes, flows, meta, header)

    def __len__(self) -> int:
        return len(self.meta)

    def __getitem__(self, k: int) -> tuple[SpatioTemporalCube, FlowCube | None]:
        m = self.meta[k]
        stc = SpatioTemporalCube(np.array(self.cubes[k]), m.box, m.video_id, m.frame_index,
                                 m.event_id)
        fc = FlowCube(np.array(self.flows[k]), m.event_id) if self.flows is not None else None
        return stc, fc
