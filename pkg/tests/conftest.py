from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from stimkit.core import BoundingBox, ClassLabel, Detection, Frame, VideoClip
from stimkit.dataset import DatasetManifest, write_clip
from stimkit.masking import detections_path, format_detection_line

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_criterion(name: str, ok: bool, detail: str = "") -> None:
    """Log one acceptance line for the terminal summary and fail the test if it did not hold."""
    _ACCEPTANCE.append((name, ok, detail))
    print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    assert ok, f"{name}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_frame(rng, width: int, height: int) -> Frame:
    return Frame(rng.integers(0, 256, (height, width, 3)))


def random_clip(rng, n_frames=4, width=8, height=6, fps=30.0, label=ClassLabel.Spinning, clip_id="c0") -> VideoClip:
    return VideoClip([random_frame(rng, width, height) for _ in range(n_frames)], fps, label, clip_id)


def make_dataset(root: Path, counts: dict[ClassLabel, int], size=(8, 8), n_frames=3, fps=30.0,
                 seed=0, prefix="clip") -> Path:
    """Write a synthetic dataset root with ``counts[label]`` clips per class."""
    rng = np.random.default_rng(seed)
    for label, n in counts.items():
        for k in range(n):
            clip_id = f"{prefix}_{label.name}_{k:03d}"
            frames = [random_frame(rng, *size) for _ in range(n_frames)]
            write_clip(VideoClip(frames, fps, label, clip_id), Path(root) / label.name / clip_id)
    return Path(root)


@pytest.fixture
def make_root(tmp_path):
    def _make(counts, **kw):
        return make_dataset(tmp_path / "raw", counts, **kw)
    return _make


def write_detections(directory: Path, manifest: DatasetManifest, seed=0, skip_every=0) -> Path:
    """One random box per frame for every clip; with ``skip_every`` k, every k-th frame has none."""
    rng = np.random.default_rng(seed)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for e in manifest.entries:
        lines = []
        for t in range(e.frame_count):
            if skip_every and t % skip_every == 0:
                continue
            x1, y1 = int(rng.integers(0, e.width - 1)), int(rng.integers(0, e.height - 1))
            x2, y2 = int(rng.integers(x1 + 1, e.width + 1)), int(rng.integers(y1 + 1, e.height + 1))
            lines.append(format_detection_line(t, [Detection(BoundingBox(x1, y1, x2, y2), 0.9, 0)]))
        detections_path(directory, e.clip_id).write_text("\n".join(lines) + "\n")
    return directory
