"""Optical flow access: a binary per-video cache written by external flow networks, with a
classical dense estimator (Farneback polynomial expansion) as fallback.

Cache layout, little-endian::

    8 bytes   magic b"VECFLOW1"
    4 x u32   count, height, width, channels (=2)
    payload   count x height x width x 2 float32, map k = flow from frame k to k+1
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import cv2
import numpy as np

from .dataset_io import VideoSequence, crop_resize, to_gray
from .roi import BoundingBox

MAGIC = b"VECFLOW1"
_HEADER = struct.Struct("<8s4I")

# Recorded with every run so results are attributable to the fallback settings.
FARNEBACK_PARAMS = dict(pyr_scale=0.5, levels=3, winsize=15, iterations=3,
                        poly_n=5, poly_sigma=1.2, flags=0)


class FlowUnavailable(RuntimeError):
    pass


def write_flow_cache(path: str | Path, flows: np.ndarray) -> None:
    flows = np.asarray(flows, dtype="<f4")
    if flows.ndim != 4 or flows.shape[3] != 2:
        raise ValueError(f"flows must be N x H x W x 2, got {flows.shape}")
    if not np.isfinite(flows).all():
        raise ValueError("flow maps must be finite")
    count, height, width, _ = flows.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, count, height, width, 2))
        fh.write(np.ascontiguousarray(flows).tobytes())


def read_flow_cache(path: str | Path) -> np.ndarray:
    """Memory-map a flow cache file (read-only)."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise ValueError(f"{path}: truncated flow cache header")
    magic, count, height, width, channels = _HEADER.unpack(head)
    if magic != MAGIC or channels != 2:
        raise ValueError(f"{path}: not a flow cache file")
    expected = _HEADER.size + count * height * width * 2 * 4
    if Path(path).stat().st_size != expected:
        raise ValueError(f"{path}: payload size does not match header {(count, height, width)}")
    return np.memmap(path, dtype="<f4", mode="r", offset=_HEADER.size,
                     shape=(count, height, width, 2))


def farneback_flow(frame_a: np.ndarray, frame_b: np.ndarray) -> np.ndarray:
    """Dense forward flow (dx, dy) from ``frame_a`` to ``frame_b`` (H x W x 3 uint8)."""
    a = np.clip(to_gray(frame_a), 0, 255).astype(np.uint8)
    b = np.clip(to_gray(frame_b), 0, 255).astype(np.uint8)
    if np.array_equal(a, b):
        # the estimator leaves small residuals on unchanged textured frames
        return np.zeros(a.shape + (2,), dtype=np.float32)
    flow = cv2.calcOpticalFlowFarneback(a, b, None, **FARNEBACK_PARAMS)
    return np.nan_to_num(flow.astype(np.float32), nan=0.0, posinf=0.0, neginf=0.0)


@dataclass
class FlowBackend:
    """Per-frame forward flow for a set of videos.

    A video's cache file ``<cache_dir>/<video_id>.flow`` wins when present; otherwise
    the fallback estimator runs on the frames. The last frame of a video reuses the
    flow of the preceding transition.
    """

    videos: Mapping[str, VideoSequence] = field(default_factory=dict)
    cache_dir: Path | None = None
    fallback: bool = True
    memo_size: int = 64

    def __post_init__(self):
        self._memo: OrderedDict[tuple[str, int], np.ndarray] = OrderedDict()
        self._cached: dict[str, np.ndarray | None] = {}

    def _cache_for(self, video_id: str) -> np.ndarray | None:
        if video_id not in self._cached:
            path = Path(self.cache_dir) / f"{video_id}.flow" if self.cache_dir else None
            self._cached[video_id] = read_flow_cache(path) if path and path.exists() else None
        return self._cached[video_id]

    def get_flow(self, video_id: str, frame_index: int) -> np.ndarray:
        cached = self._cache_for(video_id)
        video = self.videos.get(video_id)
        if cached is not None:
            n_frames = len(cached) + 1
        elif video is not None and self.fallback:
            n_frames = len(video)
        else:
            raise FlowUnavailable(f"no flow cache and no frames for video {video_id!r}")
        if n_frames < 2 or not 0 <= frame_index < n_frames:
            raise FlowUnavailable(f"no flow for frame {frame_index} of video {video_id!r}")
        k = min(frame_index, n_frames - 2)
        if cached is not None:
            return np.array(cached[k])

        key = (video_id, k)
        if key in self._memo:
            self._memo.move_to_end(key)
            return self._memo[key]
        flow = farneback_flow(video.pixels(k), video.pixels(k + 1))
        self._memo[key] = flow
        if len(self._memo) > self.memo_size:
            self._memo.popitem(last=False)
        return flow

    def export(self, video_id: str, path: str | Path) -> None:
        """Compute every map of a video with the fallback and store it as a cache file."""
        video = self.videos[video_id]
        flows = np.stack([self.get_flow(video_id, k) for k in range(len(video) - 1)])
        write_flow_cache(path, flows)


def extract_flow_patches(flow: np.ndarray, box: BoundingBox, height: int, width: int) -> np.ndarray:
    """Crop and bilinearly resize a flow map; vectors keep their original magnitudes."""
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must be H x W x 2, got {flow.shape}")
    return crop_resize(flow, box, height, width)
