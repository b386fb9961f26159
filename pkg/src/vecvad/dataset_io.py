"""Dataset manifests, frame access, temporal gradients, labels and the detection cache."""

from __future__ import annotations

import json
import logging
from collections import OrderedDict, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import cv2
import numpy as np
import yaml

from .roi import BoundingBox

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


class ManifestError(ValueError):
    pass


class CacheFormatError(ValueError):
    pass


@dataclass(frozen=True)
class VideoEntry:
    video_id: str
    frame_dir: Path
    frame_count: int


@dataclass
class DatasetManifest:
    name: str
    videos: list[VideoEntry]
    frame_size: tuple[int, int]
    color_mode: str = "color"
    labels_path: Path | None = None

    def video(self, video_id: str) -> VideoEntry:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise KeyError(video_id)

    def open(self, video_id: str) -> "VideoSequence":
        v = self.video(video_id)
        return VideoSequence.from_directory(v.video_id, v.frame_dir, self.frame_size)


@dataclass
class Frame:
    pixels: np.ndarray  # H x W x 3, uint8
    index: int
    video_id: str = ""


@dataclass
class GradientMap:
    values: np.ndarray  # H x W, float32, >= 0
    index: int


def list_frame_files(frame_dir: Path) -> list[Path]:
    return sorted(p for p in frame_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read and validate a YAML manifest. Relative paths resolve against its directory.

    Expected layout::

        name: ped2-train
        color_mode: gray
        frame_size: [240, 360]
        labels: labels.txt          # optional
        videos:
          - {id: Train001, frames: Train001, frame_count: 120}
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ManifestError(f"manifest {path} must be a mapping")

    root = path.parent
    color_mode = raw.get("color_mode", "color")
    if color_mode not in ("gray", "color"):
        raise ManifestError(f"color_mode must be 'gray' or 'color', got {color_mode!r}")
    try:
        height, width = (int(v) for v in raw["frame_size"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError("manifest needs frame_size: [height, width]") from exc

    videos, seen = [], set()
    for item in raw.get("videos") or []:
        vid = str(item["id"])
        if vid in seen:
            raise ManifestError(f"duplicate video_id {vid!r}")
        seen.add(vid)
        frame_dir = root / item.get("frames", vid)
        if not frame_dir.is_dir():
            raise ManifestError(f"video {vid!r}: frame directory {frame_dir} does not exist")
        n_files = len(list_frame_files(frame_dir))
        count = int(item.get("frame_count", n_files))
        if count != n_files:
            raise ManifestError(
                f"video {vid!r}: manifest says {count} frames, found {n_files} in {frame_dir}"
            )
        videos.append(VideoEntry(vid, frame_dir, count))

    labels = raw.get("labels")
    return DatasetManifest(
        name=str(raw.get("name", path.stem)),
        videos=videos,
        frame_size=(height, width),
        color_mode=color_mode,
        labels_path=(root / labels) if labels else None,
    )


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    root = path.parent.resolve()

    def rel(p: Path) -> str:
        p = Path(p).resolve()
        try:
            return str(p.relative_to(root))
        except ValueError:
            return str(p)

    data = {
        "name": manifest.name,
        "color_mode": manifest.color_mode,
        "frame_size": list(manifest.frame_size),
        "videos": [
            {"id": v.video_id, "frames": rel(v.frame_dir), "frame_count": v.frame_count}
            for v in manifest.videos
        ],
    }
    if manifest.labels_path is not None:
        data["labels"] = rel(manifest.labels_path)
    path.write_text(yaml.safe_dump(data, sort_keys=False))


def read_image(path: Path) -> np.ndarray:
    """Load an image as H x W x 3 uint8 RGB, replicating single-channel sources."""
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise OSError(f"cannot decode image {path}")
    if img.dtype != np.uint8:
        img = cv2.normalize(img, None, 0, 255, cv2.NORM_MINMAX).astype(np.uint8)
    if img.ndim == 2:
        return np.repeat(img[:, :, None], 3, axis=2)
    if img.shape[2] == 4:
        img = img[:, :, :3]
    return np.ascontiguousarray(img[:, :, ::-1])


class VideoSequence:
    """Random access to the frames of one video, lazily decoded from disk or held in memory."""

    def __init__(self, video_id: str, frames: np.ndarray | None = None,
                 files: Sequence[Path] | None = None,
                 frame_size: tuple[int, int] | None = None, cache_size: int = 16):
        if (frames is None) == (files is None):
            raise ValueError("give exactly one of frames or files")
        self.video_id = video_id
        self._frames = None
        if frames is not None:
            frames = np.asarray(frames)
            if frames.ndim == 3:
                frames = np.repeat(frames[..., None], 3, axis=3)
            if frames.ndim != 4 or frames.shape[3] != 3:
                raise ValueError(f"frames must be T x H x W [x 3], got {frames.shape}")
            self._frames = frames.astype(np.uint8, copy=False)
            frame_size = frames.shape[1:3]
        self._files = list(files) if files is not None else None
        self.frame_size = tuple(frame_size) if frame_size is not None else None
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self._cache_size = cache_size

    @classmethod
    def from_directory(cls, video_id: str, frame_dir: Path,
                       frame_size: tuple[int, int] | None = None) -> "VideoSequence":
        return cls(video_id, files=list_frame_files(Path(frame_dir)), frame_size=frame_size)

    def __len__(self) -> int:
        return len(self._frames) if self._frames is not None else len(self._files)

    def pixels(self, index: int) -> np.ndarray:
        if not 0 <= index < len(self):
            raise IndexError(f"frame {index} out of range for video {self.video_id!r}")
        if self._frames is not None:
            return self._frames[index]
        if index in self._cache:
            self._cache.move_to_end(index)
            return self._cache[index]
        img = read_image(self._files[index])
        if self.frame_size is not None and img.shape[:2] != self.frame_size:
            raise ManifestError(
                f"video {self.video_id!r} frame {index}: size {img.shape[:2]} != {self.frame_size}"
            )
        self._cache[index] = img
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return img

    def frame(self, index: int) -> Frame:
        return Frame(self.pixels(index), index, self.video_id)

    def __iter__(self) -> Iterator[Frame]:
        for i in range(len(self)):
            yield self.frame(i)


def to_gray(pixels: np.ndarray) -> np.ndarray:
    return np.asarray(pixels, dtype=np.float32).mean(axis=2)


def temporal_gradient(frame_t: Frame, frame_prev: Frame) -> GradientMap:
    """Absolute difference of channel-mean intensities between two consecutive frames."""
    if frame_t.pixels.shape != frame_prev.pixels.shape:
        raise ValueError(
            f"frame shapes differ: {frame_t.pixels.shape} vs {frame_prev.pixels.shape}"
        )
    if frame_t.video_id != frame_prev.video_id or abs(frame_t.index - frame_prev.index) != 1:
        raise ValueError("temporal_gradient needs consecutive frames of one video")
    values = np.abs(to_gray(frame_t.pixels) - to_gray(frame_prev.pixels))
    return GradientMap(values, max(frame_t.index, frame_prev.index))


def zero_gradient(frame: Frame) -> GradientMap:
    return GradientMap(np.zeros(frame.pixels.shape[:2], dtype=np.float32), frame.index)


# -- labels -----------------------------------------------------------------------------


def read_labels(path: str | Path) -> dict[str, np.ndarray]:
    """``video_id 0,0,1,...`` per line."""
    tracks = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            vid, values = line.split(maxsplit=1)
            labels = np.array([int(v) for v in values.split(",")], dtype=np.int8)
        except ValueError as exc:
            raise CacheFormatError(f"{path}:{lineno}: malformed label line") from exc
        if not np.isin(labels, (0, 1)).all():
            raise CacheFormatError(f"{path}:{lineno}: labels must be 0 or 1")
        tracks[vid] = labels
    return tracks


def write_labels(path: str | Path, tracks: dict[str, Sequence[int]]) -> None:
    lines = [f"{vid} {','.join(str(int(v)) for v in labels)}" for vid, labels in tracks.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_frame_labels(manifest: DatasetManifest) -> dict[str, np.ndarray]:
    if manifest.labels_path is None:
        raise ManifestError(f"dataset {manifest.name!r} has no labels file")
    tracks = read_labels(manifest.labels_path)
    for v in manifest.videos:
        if v.video_id not in tracks:
            raise ManifestError(f"no labels for video {v.video_id!r}")
        if len(tracks[v.video_id]) != v.frame_count:
            raise ManifestError(
                f"video {v.video_id!r}: {len(tracks[v.video_id])} labels for {v.frame_count} frames"
            )
    return tracks


# -- detection cache --------------------------------------------------------------------

_DETECTION_FIELDS = ("video_id", "frame_index", "x1", "y1", "x2", "y2", "score")


@dataclass
class DetectionRecord:
    video_id: str
    frame_index: int
    box: BoundingBox
    score: float

    def to_line(self) -> str:
        b = self.box
        values = (self.video_id, self.frame_index, b.x1, b.y1, b.x2, b.y2, self.score)
        return json.dumps(dict(zip(_DETECTION_FIELDS, values)))


@dataclass
class DetectionCache:
    """Detector output keyed by (video_id, frame_index); one JSON object per line."""

    records: list[DetectionRecord] = field(default_factory=list)

    def __post_init__(self):
        self._index: dict[tuple[str, int], list[tuple[BoundingBox, float]]] = defaultdict(list)
        for r in self.records:
            self._index[(r.video_id, r.frame_index)].append((r.box, r.score))

    @classmethod
    def read(cls, path: str | Path) -> "DetectionCache":
        records = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    d = json.loads(line)
                    box = BoundingBox(*(int(round(float(d[k]))) for k in ("x1", "y1", "x2", "y2")))
                    rec = DetectionRecord(str(d["video_id"]), int(d["frame_index"]), box,
                                          float(d["score"]))
                except (ValueError, KeyError, TypeError) as exc:
                    raise CacheFormatError(f"{path}:{lineno}: malformed detection record: {exc}") from exc
                records.append(rec)
        return cls(records)

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(r.to_line() + "\n")

    def add(self, video_id: str, frame_index: int, box: BoundingBox, score: float) -> None:
        rec = DetectionRecord(video_id, frame_index, box, float(score))
        self.records.append(rec)
        self._index[(video_id, frame_index)].append((box, rec.score))

    def get(self, video_id: str, frame_index: int) -> list[tuple[BoundingBox, float]]:
        return list(self._index.get((video_id, frame_index), ()))


@lru_cache(maxsize=8)
def _cached_detection_file(path: str, mtime: float) -> DetectionCache:
    return DetectionCache.read(path)


def load_cached_detections(path: str | Path, video_id: str,
                           frame_index: int) -> list[tuple[BoundingBox, float]]:
    path = Path(path)
    return _cached_detection_file(str(path), path.stat().st_mtime).get(video_id, frame_index)


def write_frames(frame_dir: str | Path, frames: Iterable[np.ndarray]) -> int:
    """Dump frames (H x W or H x W x 3 RGB uint8) as zero-padded PNG files."""
    frame_dir = Path(frame_dir)
    frame_dir.mkdir(parents=True, exist_ok=True)
    n = 0
    for n, img in enumerate(frames, 1):
        img = np.asarray(img, dtype=np.uint8)
        if img.ndim == 3:
            img = img[:, :, ::-1]
        cv2.imwrite(str(frame_dir / f"{n - 1:05d}.png"), img)
    return n


def crop_resize(image: np.ndarray, box: BoundingBox, height: int, width: int) -> np.ndarray:
    """Crop ``box`` out of an H x W x C array and bilinearly resize it to ``height`` x ``width``.

    Values are not rescaled; the result is float32.
    """
    img_h, img_w = image.shape[:2]
    if box.x1 < 0 or box.y1 < 0 or box.x2 > img_w or box.y2 > img_h:
        raise ValueError(f"box {box.as_tuple()} exceeds image bounds {(img_h, img_w)}")
    crop = np.asarray(image[box.y1:box.y2, box.x1:box.x2], dtype=np.float64)
    if crop.shape[:2] == (height, width):
        return crop.astype(np.float32)
    out = cv2.resize(crop, (width, height), interpolation=cv2.INTER_LINEAR)
    if out.ndim == 2:
        out = out[:, :, None]
    return out.astype(np.float32)
