"""Synthetic moving-square videos with known geometry, used by tests and the demo."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import cv2
import numpy as np
import yaml

from .dataset_io import DatasetManifest, VideoEntry, write_frames, write_labels, write_manifest


def textured_square(rng: np.random.Generator, size: int = 20, low: int = 120) -> np.ndarray:
    """Bright, smoothly textured patch in [low, 255].

    A uniform square would only change at its leading and trailing edges between
    frames; texture makes the whole moving body show up in the temporal gradient.
    """
    noise = rng.random((size, size)).astype(np.float32)
    noise = cv2.GaussianBlur(noise, (0, 0), 0.6)
    noise = (noise - noise.min()) / max(float(noise.max() - noise.min()), 1e-6)
    return (low + noise * (255 - low)).astype(np.uint8)


def render(shape: tuple[int, int], squares: Sequence[tuple[np.ndarray, int, int]]) -> np.ndarray:
    """Black gray-scale frame with each ``(texture, x, y)`` pasted at its top-left corner."""
    frame = np.zeros(shape, dtype=np.uint8)
    for tex, x, y in squares:
        h, w = tex.shape
        x0, y0 = max(x, 0), max(y, 0)
        x1, y1 = min(x + w, shape[1]), min(y + h, shape[0])
        if x1 > x0 and y1 > y0:
            frame[y0:y1, x0:x1] = tex[y0 - y:y1 - y, x0 - x:x1 - x]
    return frame


def square_track(x0: int, speeds: Sequence[int]) -> np.ndarray:
    """x position at every frame given per-transition speeds (frame 0 at ``x0``)."""
    return x0 + np.concatenate([[0], np.cumsum(speeds)]).astype(int)


def moving_square_video(shape: tuple[int, int], textures: Sequence[np.ndarray],
                        tracks: Sequence[np.ndarray], rows: Sequence[int]) -> np.ndarray:
    n = len(tracks[0])
    return np.stack([
        render(shape, [(tex, int(tr[t]), row) for tex, tr, row in zip(textures, tracks, rows)])
        for t in range(n)
    ])


def speed_anomaly_pair(seed: int = 0, frames: int = 60, shape: tuple[int, int] = (64, 160),
                       normal_speed: int = 1, fast_speed: int = 4,
                       fast_span: tuple[int, int] = (30, 45)):
    """A normal training video and a test video whose squares speed up during ``fast_span``.

    Returns ``(train_frames, test_frames, test_labels)``; a test frame is anomalous when
    the squares reached it at the fast speed.
    """
    rng = np.random.default_rng(seed)
    rows = (6, 38)

    train_tex = [textured_square(rng) for _ in rows]
    train_tracks = [square_track(x0, [normal_speed] * (frames - 1)) for x0 in (8, 40)]
    train = moving_square_video(shape, train_tex, train_tracks, rows)

    speeds = np.full(frames - 1, normal_speed)
    lo, hi = fast_span
    speeds[lo:hi] = fast_speed  # transition k moves frame k -> k+1
    test_tex = [textured_square(rng) for _ in rows]
    test_tracks = [square_track(x0, speeds) for x0 in (8, 30)]
    test = moving_square_video(shape, test_tex, test_tracks, rows)

    labels = np.zeros(frames, dtype=np.int8)
    labels[lo + 1:hi + 1] = 1
    return train, test, labels


def write_synthetic_dataset(root: str | Path, seed: int = 0) -> dict[str, Path]:
    """Write train/test frames, manifests, labels and a small CPU-sized config."""
    root = Path(root)
    train, test, labels = speed_anomaly_pair(seed)
    paths = {}
    for split, frames in (("train", train), ("test", test)):
        vid = f"{split}01"
        frame_dir = root / split / vid
        write_frames(frame_dir, frames)
        manifest = DatasetManifest(
            name=f"synthetic-{split}", videos=[VideoEntry(vid, frame_dir, len(frames))],
            frame_size=frames.shape[1:3], color_mode="gray",
        )
        if split == "test":
            write_labels(root / "test_labels.txt", {vid: labels})
            manifest.labels_path = root / "test_labels.txt"
        write_manifest(manifest, root / f"{split}.yaml")
        paths[split] = root / f"{split}.yaml"

    config = {
        "dataset": {"name": "synthetic", "train_manifest": "train.yaml",
                    "test_manifest": "test.yaml"},
        "roi": {"mode": "both"},
        "model": {"widths": [8, 16]},
        "train": {"epochs": 20, "batch_size": 16, "seed": seed},
        "ensemble": {"preset": "custom", "w_a": 0.0, "w_m": 1.0,
                     "appearance_types": [], "motion_types": [5]},
        "output": {"dir": "run"},
    }
    paths["config"] = root / "config.yaml"
    paths["config"].write_text(yaml.safe_dump(config, sort_keys=False))
    return paths
