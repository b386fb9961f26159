import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vecvad.dataset_io import DatasetManifest, VideoEntry, write_frames, write_manifest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def write_dataset(tmp_path):
    """Write ``{video_id: frames}`` to disk and return the manifest path."""

    def _write(videos, name="mini", color_mode="gray", labels=None):
        entries = []
        for vid, frames in videos.items():
            n = write_frames(tmp_path / name / vid, frames)
            entries.append(VideoEntry(vid, tmp_path / name / vid, n))
        first = np.asarray(next(iter(videos.values())))
        manifest = DatasetManifest(name, entries, tuple(first.shape[1:3]), color_mode)
        if labels is not None:
            from vecvad.dataset_io import write_labels
            write_labels(tmp_path / f"{name}_labels.txt", labels)
            manifest.labels_path = tmp_path / f"{name}_labels.txt"
        path = tmp_path / f"{name}.yaml"
        write_manifest(manifest, path)
        return path

    return _write
