"""Region-of-interest extraction from appearance (detections) and motion (temporal gradients).

Boxes use integer pixel coordinates with a top-left origin. ``x1``/``y1`` are the first
covered column/row and ``x2``/``y2`` are one past the last, so ``width = x2 - x1``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np
from scipy import ndimage

if TYPE_CHECKING:
    from .dataset_io import Frame, GradientMap

APPEARANCE = "appearance"
MOTION = "motion"

MODES = ("appearance_only", "motion_only", "both")


@dataclass(frozen=True)
class BoundingBox:
    x1: int
    y1: int
    x2: int
    y2: int
    source: str = APPEARANCE

    def __post_init__(self):
        if self.x2 <= self.x1 or self.y2 <= self.y1:
            raise ValueError(f"degenerate box {self.as_tuple()}")
        if self.source not in (APPEARANCE, MOTION):
            raise ValueError(f"unknown box source {self.source!r}")

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def aspect_ratio(self) -> float:
        return self.width / self.height

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)

    def intersection_area(self, other: "BoundingBox") -> int:
        w = min(self.x2, other.x2) - max(self.x1, other.x1)
        h = min(self.y2, other.y2) - max(self.y1, other.y1)
        return max(w, 0) * max(h, 0)

    def clamp(self, height: int, width: int) -> "BoundingBox | None":
        """Clip to a ``height`` x ``width`` frame; ``None`` if nothing is left."""
        x1, x2 = max(self.x1, 0), min(self.x2, width)
        y1, y2 = max(self.y1, 0), min(self.y2, height)
        if x2 <= x1 or y2 <= y1:
            return None
        return replace(self, x1=x1, y1=y1, x2=x2, y2=y2)


@dataclass(frozen=True)
class RoiConfig:
    """Thresholds of the localization stage.

    score_thr: detector confidence threshold.
    area_thr: minimum box area in px^2 (strict).
    overlap_thr: maximum containment ratio against a larger detection.
    grad_thr: temporal-gradient binarization threshold.
    max_aspect: symmetric bound on width/height of motion boxes.
    """

    score_thr: float = 0.5
    area_thr: float = 100
    overlap_thr: float = 0.6
    grad_thr: float = 18
    max_aspect: float = 10

    def __post_init__(self):
        for name in ("score_thr", "area_thr", "overlap_thr", "grad_thr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.overlap_thr <= 1:
            raise ValueError("overlap_thr must lie in (0, 1]")
        if self.max_aspect < 1:
            raise ValueError("max_aspect must be >= 1")


def overlap_ratios(boxes: Sequence[BoundingBox]) -> list[float]:
    """Containment of each box in its largest-overlapping equal-or-larger peer.

    For equal areas only earlier boxes count as "larger", so of two equal boxes the
    later one is the one judged nested.
    """
    ratios = []
    for k, b in enumerate(boxes):
        best = 0.0
        for m, other in enumerate(boxes):
            if m == k:
                continue
            if other.area > b.area or (other.area == b.area and m < k):
                best = max(best, b.intersection_area(other) / b.area)
        ratios.append(best)
    return ratios


def filter_appearance_rois(
    detections: Iterable[tuple[BoundingBox, float]],
    cfg: RoiConfig,
    frame_shape: tuple[int, int] | None = None,
) -> list[BoundingBox]:
    """Confidence, area and nesting filters over detector boxes (input order kept)."""
    candidates = []
    for box, score in detections:
        if score < cfg.score_thr:
            continue
        if frame_shape is not None:
            box = box.clamp(*frame_shape)
            if box is None:
                continue
        candidates.append(replace(box, source=APPEARANCE))

    ratios = overlap_ratios(candidates)
    return [
        b for b, r in zip(candidates, ratios)
        if b.area > cfg.area_thr and r < cfg.overlap_thr
    ]


def binarize_gradient(grad: "GradientMap | np.ndarray", cfg: RoiConfig) -> np.ndarray:
    values = getattr(grad, "values", grad)
    return np.asarray(values) > cfg.grad_thr


def subtract_rois(mask: np.ndarray, appearance_rois: Iterable[BoundingBox]) -> np.ndarray:
    out = np.array(mask, dtype=bool, copy=True)
    for b in appearance_rois:
        out[b.y1:b.y2, b.x1:b.x2] = False
    return out


_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def extract_motion_rois(mask: np.ndarray, cfg: RoiConfig) -> list[BoundingBox]:
    """Bounding boxes of 8-connected foreground components passing area/aspect filters."""
    labels, _ = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    boxes = []
    for sl in ndimage.find_objects(labels):
        if sl is None:
            continue
        ys, xs = sl
        box = BoundingBox(xs.start, ys.start, xs.stop, ys.stop, source=MOTION)
        if box.area > cfg.area_thr and 1 / cfg.max_aspect < box.aspect_ratio < cfg.max_aspect:
            boxes.append(box)
    boxes.sort(key=lambda b: (b.y1, b.x1))
    return boxes


def extract_rois(
    frame: "Frame",
    grad: "GradientMap | None",
    detections: Iterable[tuple[BoundingBox, float]],
    cfg: RoiConfig,
    mode: str = "both",
) -> list[BoundingBox]:
    """Final RoI set for one frame: appearance boxes first, then motion boxes.

    ``grad`` may be ``None`` for the first frame of a video, which then contributes no
    motion boxes.
    """
    if mode not in MODES:
        raise ValueError(f"unknown RoI mode {mode!r}; expected one of {MODES}")
    shape = frame.pixels.shape[:2]

    b_a: list[BoundingBox] = []
    if mode != "motion_only":
        b_a = filter_appearance_rois(detections, cfg, frame_shape=shape)
    if mode == "appearance_only" or grad is None:
        return b_a

    values = np.asarray(getattr(grad, "values", grad))
    if values.shape != shape:
        raise ValueError(f"gradient shape {values.shape} does not match frame {shape}")
    mask = binarize_gradient(values, cfg)
    if mode == "both":
        mask = subtract_rois(mask, b_a)
    return b_a + extract_motion_rois(mask, cfg)
