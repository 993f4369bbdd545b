"""Clip storage, manifests, trimming, stratified splits and dataset statistics.

On disk a clip is a directory of ``frame_000000.png``, ``frame_000001.png``,
... next to a ``clip.json`` descriptor. A dataset root holds one directory
per class label, each holding clip directories. Manifests are JSON with
paths stored relative to the manifest's own directory.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image

from .core import ClassLabel, Frame, Provenance, VideoClip

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DESCRIPTOR = "clip.json"
SPLITS = ("train", "val", "test")


class DatasetError(Exception):
    """A clip, descriptor or manifest that cannot be used."""


# ----------------------------------------------------------------------------
# file helpers


# read once at import; os.umask can only be queried by setting it
_UMASK = os.umask(0)
os.umask(_UMASK)


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        # mkstemp creates 0600; give the file the mode a plain open() would
        os.fchmod(fd, 0o666 & ~_UMASK)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def frame_filename(index: int) -> str:
    return f"frame_{index:06d}.png"


# ----------------------------------------------------------------------------
# clip directories


def _clean_fps(fps: float):
    return int(fps) if float(fps).is_integer() else float(fps)


def write_clip(clip: VideoClip, directory: Path) -> None:
    """Write frames and descriptor, replacing whatever the directory held."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for old in directory.glob("frame_*.png"):
        old.unlink()
    for k, frame in enumerate(clip.frames):
        Image.fromarray(np.ascontiguousarray(frame.pixels), "RGB").save(directory / frame_filename(k), format="PNG")
    desc = {
        "fps": _clean_fps(clip.fps),
        "width": clip.width,
        "height": clip.height,
        "frame_count": clip.frame_count,
        "label": clip.label.name,
    }
    atomic_write_text(directory / DESCRIPTOR, dump_json(desc))


def read_descriptor(directory: Path) -> dict:
    directory = Path(directory)
    name = directory.name
    try:
        desc = json.loads((directory / DESCRIPTOR).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetError(f"clip {name}: missing {DESCRIPTOR}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"clip {name}: malformed {DESCRIPTOR}: {exc}") from None
    if not isinstance(desc, dict):
        raise DatasetError(f"clip {name}: {DESCRIPTOR} is not a JSON object")
    for key in ("fps", "width", "height", "frame_count", "label"):
        if key not in desc:
            raise DatasetError(f"clip {name}: {DESCRIPTOR} lacks '{key}'")
    try:
        desc["label"] = ClassLabel.parse(desc["label"])
        fps = float(desc["fps"])
        ints = [desc[k] for k in ("width", "height", "frame_count")]
        if any(isinstance(v, bool) or not isinstance(v, int) or v < 1 for v in ints):
            raise ValueError("width, height and frame_count must be integers >= 1")
        if not fps > 0:
            raise ValueError("fps must be positive")
    except (ValueError, TypeError) as exc:
        raise DatasetError(f"clip {name}: malformed {DESCRIPTOR}: {exc}") from None
    return desc


def read_clip(directory: Path, clip_id: Optional[str] = None,
              provenance: Optional[Provenance] = None) -> VideoClip:
    directory = Path(directory)
    clip_id = clip_id or directory.name
    desc = read_descriptor(directory)
    frames = []
    for k in range(desc["frame_count"]):
        path = directory / frame_filename(k)
        try:
            with Image.open(path) as img:
                frames.append(Frame(np.asarray(img.convert("RGB"))))
        except (OSError, ValueError) as exc:
            raise DatasetError(f"clip {clip_id}: cannot read {path.name}: {exc}") from None
    clip = VideoClip(frames, desc["fps"], desc["label"], clip_id, provenance)
    if (clip.width, clip.height) != (desc["width"], desc["height"]):
        raise DatasetError(
            f"clip {clip_id}: frames are {clip.width}x{clip.height}, "
            f"descriptor says {desc['width']}x{desc['height']}"
        )
    return clip


# ----------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    path: str
    label: ClassLabel
    frame_count: int
    width: int
    height: int
    fps: float
    split: Optional[str] = None
    provenance: Optional[Provenance] = None

    def __post_init__(self):
        object.__setattr__(self, "label", ClassLabel.parse(self.label))
        if self.frame_count < 1 or self.width < 1 or self.height < 1:
            raise ValueError(f"entry {self.clip_id}: frame_count, width and height must be >= 1")
        if self.split is not None and self.split not in SPLITS:
            raise ValueError(f"entry {self.clip_id}: unknown split {self.split!r}")

    @property
    def duration(self) -> float:
        return self.frame_count / self.fps

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "path": self.path,
            "label": self.label.name,
            "frame_count": self.frame_count,
            "width": self.width,
            "height": self.height,
            "fps": _clean_fps(self.fps),
            "split": self.split,
            "provenance": self.provenance.to_dict() if self.provenance else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        return cls(
            clip_id=str(d["clip_id"]),
            path=str(d["path"]),
            label=ClassLabel.parse(d["label"]),
            frame_count=int(d["frame_count"]),
            width=int(d["width"]),
            height=int(d["height"]),
            fps=float(d["fps"]),
            split=d.get("split"),
            provenance=Provenance.from_dict(d.get("provenance")),
        )

    @classmethod
    def for_clip(cls, clip: VideoClip, path: str) -> "ManifestEntry":
        return cls(clip.clip_id, path, clip.label, clip.frame_count, clip.width,
                   clip.height, clip.fps, provenance=clip.provenance)


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...] = ()
    schema_version: int = SCHEMA_VERSION
    base_dir: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen: set[str] = set()
        for e in self.entries:
            if e.clip_id in seen:
                raise DatasetError(f"duplicate clip_id {e.clip_id!r}")
            seen.add(e.clip_id)

    def __len__(self) -> int:
        return len(self.entries)

    def by_label(self) -> dict[ClassLabel, list[ManifestEntry]]:
        groups: dict[ClassLabel, list[ManifestEntry]] = {lab: [] for lab in ClassLabel}
        for e in self.entries:
            groups[e.label].append(e)
        return groups

    def class_counts(self) -> dict[ClassLabel, int]:
        return {lab: len(es) for lab, es in self.by_label().items()}

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        if p.is_absolute() or self.base_dir is None:
            return p
        return self.base_dir / p

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "entries": [e.to_dict() for e in self.entries]}


def load_manifest(path: Path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        entries = [ManifestEntry.from_dict(d) for d in doc["entries"]]
        version = int(doc.get("schema_version", SCHEMA_VERSION))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{path}: unreadable manifest: {exc}") from exc
    if version != SCHEMA_VERSION:
        raise DatasetError(f"{path}: unsupported schema_version {version}")
    return DatasetManifest(entries, version, base_dir=path.parent)


def save_manifest(manifest: DatasetManifest, path: Path) -> None:
    atomic_write_text(Path(path), dump_json(manifest.to_dict()))


def clip_relpath(label: ClassLabel, clip_id: str) -> str:
    return f"{label.name}/{clip_id}"


def store_clip(clip: VideoClip, root: Path) -> ManifestEntry:
    """Write ``clip`` under ``root`` in the class/clip layout and return its entry."""
    rel = clip_relpath(clip.label, clip.clip_id)
    write_clip(clip, Path(root) / rel)
    return ManifestEntry.for_clip(clip, rel)


def load_entry_clip(manifest: DatasetManifest, entry: ManifestEntry) -> VideoClip:
    return read_clip(manifest.resolve(entry), entry.clip_id, entry.provenance)


# ----------------------------------------------------------------------------
# scan


def scan(root: Path, jobs: Optional[int] = None) -> DatasetManifest:
    """Catalog every clip directory under ``root/<ClassLabel>/``."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    clip_dirs: list[tuple[ClassLabel, Path]] = []
    for class_dir in sorted(root.iterdir()):
        if not class_dir.is_dir() or class_dir.name.startswith("."):
            continue
        try:
            label = ClassLabel[class_dir.name]
        except KeyError:
            raise DatasetError(f"{class_dir}: unknown class directory {class_dir.name!r}") from None
        for d in sorted(class_dir.iterdir()):
            if d.is_dir() and not d.name.startswith("."):
                clip_dirs.append((label, d))

    def describe(item: tuple[ClassLabel, Path]) -> ManifestEntry:
        label, d = item
        desc = read_descriptor(d)
        if desc["label"] is not label:
            raise DatasetError(f"clip {d.name}: labelled {desc['label'].name} but stored under {label.name}")
        n_files = sum(1 for _ in d.glob("frame_*.png"))
        if n_files != desc["frame_count"]:
            raise DatasetError(f"clip {d.name}: descriptor lists {desc['frame_count']} frames, found {n_files}")
        return ManifestEntry(d.name, clip_relpath(label, d.name), label, desc["frame_count"],
                             desc["width"], desc["height"], float(desc["fps"]))

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        entries = list(pool.map(describe, clip_dirs))
    entries.sort(key=lambda e: e.clip_id)
    return DatasetManifest(entries, base_dir=root)


# ----------------------------------------------------------------------------
# trimming


def trim(clip: VideoClip, segments: Sequence[tuple[int, int]]) -> list[VideoClip]:
    """Cut ``clip`` into one clip per half-open frame range ``[start, end)``."""
    if not segments:
        raise ValueError(f"clip {clip.clip_id}: no segments given")
    n = clip.frame_count
    for start, end in segments:
        if not (0 <= start < end <= n):
            raise ValueError(f"clip {clip.clip_id}: segment ({start}, {end}) invalid for {n} frames")
    return [
        VideoClip(clip.frames[start:end], clip.fps, clip.label,
                  f"{clip.clip_id}_{start}-{end}", Provenance(clip.clip_id, segment=(start, end)))
        for start, end in segments
    ]


def read_segments(path: Path) -> dict[str, list[tuple[int, int]]]:
    """Parse ``clip_id start_frame end_frame`` lines; '#' starts a comment."""
    out: dict[str, list[tuple[int, int]]] = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if len(parts) != 3:
                    raise ValueError("expected 'clip_id start end'")
                out[parts[0]].append((int(parts[1]), int(parts[2])))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return dict(out)


def trim_dataset(manifest: DatasetManifest, segments: dict[str, list[tuple[int, int]]],
                 out_root: Path, jobs: Optional[int] = None) -> DatasetManifest:
    """Trim the listed clips into ``out_root``; unlisted clips are carried over whole."""
    known = {e.clip_id for e in manifest.entries}
    unknown = sorted(set(segments) - known)
    if unknown:
        raise DatasetError(f"segments reference unknown clips: {', '.join(unknown)}")

    def work(entry: ManifestEntry) -> list[ManifestEntry]:
        clip = load_entry_clip(manifest, entry)
        parts = trim(clip, segments[entry.clip_id]) if entry.clip_id in segments else [clip]
        return [store_clip(c, out_root) for c in parts]

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(work, manifest.entries))
    entries = sorted((e for group in results for e in group), key=lambda e: e.clip_id)
    return DatasetManifest(entries, base_dir=Path(out_root))


# ----------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitRatios:
    train: Fraction = Fraction(70, 100)
    val: Fraction = Fraction(15, 100)
    test: Fraction = Fraction(15, 100)
    seed: int = 0

    def __post_init__(self):
        for name in ("train", "val", "test"):
            v = Fraction(getattr(self, name)).limit_denominator(10**9)
            if not 0 < v < 1:
                raise ValueError(f"{name} fraction must lie in (0, 1), got {float(v)}")
            object.__setattr__(self, name, v)
        if abs(float(self.train + self.val + self.test) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "SplitRatios":
        """Read ``"70:15:15"`` style train:val:test weights."""
        parts = [p for p in text.replace("/", ":").split(":") if p]
        if len(parts) != 3:
            raise ValueError(f"expected train:val:test, got {text!r}")
        weights = [Fraction(p) for p in parts]
        total = sum(weights)
        if total <= 0:
            raise ValueError(f"ratios {text!r} do not sum to a positive value")
        return cls(*(w / total for w in weights), seed=seed)


def split_counts(n: int, ratios: SplitRatios = SplitRatios()) -> dict[str, int]:
    """Per-class (train, val, test) sizes.

    train = floor(train * n); the remainder goes to test and val in proportion,
    test rounded up. At 70:15:15 this gives 20/4/5 for 29 clips and 142/30/31
    for 203.
    """
    n_train = math.floor(ratios.train * n)
    rest = n - n_train
    n_test = math.ceil(rest * ratios.test / (ratios.test + ratios.val))
    return {"train": n_train, "val": rest - n_test, "test": n_test}


def split(manifest: DatasetManifest, ratios: SplitRatios = SplitRatios(), force: bool = False) -> DatasetManifest:
    """Stratified train/val/test assignment, deterministic in (clips, seed)."""
    if not force:
        taken = [e.clip_id for e in manifest.entries if e.split is not None]
        if taken:
            raise DatasetError(f"{len(taken)} entries already have a split (first: {taken[0]}); use force to reassign")
    assignment: dict[str, str] = {}
    for label, group in manifest.by_label().items():
        ids = sorted(e.clip_id for e in group)
        rng = np.random.default_rng([ratios.seed, int(label)])
        order = [ids[k] for k in rng.permutation(len(ids))]
        counts = split_counts(len(ids), ratios)
        cursor = 0
        for name in ("train", "test", "val"):
            for cid in order[cursor:cursor + counts[name]]:
                assignment[cid] = name
            cursor += counts[name]
    entries = [replace(e, split=assignment[e.clip_id]) for e in manifest.entries]
    return DatasetManifest(entries, manifest.schema_version, manifest.base_dir)


def split_summary(manifest: DatasetManifest) -> dict[str, dict[str, int]]:
    table = {lab.name: {s: 0 for s in SPLITS} for lab in ClassLabel}
    for e in manifest.entries:
        if e.split is not None:
            table[e.label.name][e.split] += 1
    return table


# ----------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class ClassStats:
    n_videos: int
    min_frames: Optional[int] = None
    max_frames: Optional[int] = None
    avg_frames: Optional[float] = None
    min_size: Optional[tuple[int, int]] = None
    max_size: Optional[tuple[int, int]] = None
    avg_size: Optional[tuple[float, float]] = None
    min_duration: Optional[float] = None
    max_duration: Optional[float] = None
    avg_duration: Optional[float] = None

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        for k in ("min_size", "max_size", "avg_size"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d


@dataclass(frozen=True)
class StatsTable:
    classes: dict[ClassLabel, ClassStats]

    def __getitem__(self, label: ClassLabel) -> ClassStats:
        return self.classes[label]

    def to_dict(self) -> dict:
        return {lab.name: st.to_dict() for lab, st in self.classes.items()}

    def rows(self) -> list[list[str]]:
        """Statistic-by-class grid, header row first; absent values render as ''."""

        def size(s):
            return "" if s is None else f"{_num(s[0])}x{_num(s[1])}"

        def num(v, unit=""):
            return "" if v is None else f"{_num(v)}{unit}"

        labels = list(self.classes)
        fields = [
            ("Min Frame Count", lambda s: num(s.min_frames)),
            ("Max Frame Count", lambda s: num(s.max_frames)),
            ("Avg Frame Count", lambda s: num(s.avg_frames)),
            ("Min Frame Size", lambda s: size(s.min_size)),
            ("Max Frame Size", lambda s: size(s.max_size)),
            ("Avg Frame Size", lambda s: size(s.avg_size)),
            ("Avg video duration (s)", lambda s: num(s.avg_duration)),
            ("Number of videos", lambda s: str(s.n_videos)),
        ]
        out = [["statistic"] + [lab.name for lab in labels]]
        for name, fmt in fields:
            out.append([name] + [fmt(self.classes[lab]) for lab in labels])
        return out


def _num(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.2f}"


def class_stats(entries: Iterable[ManifestEntry]) -> ClassStats:
    entries = list(entries)
    if not entries:
        return ClassStats(0)
    frames = [e.frame_count for e in entries]
    sizes = [(e.width, e.height) for e in entries]
    durations = [e.duration for e in entries]
    n = len(entries)
    return ClassStats(
        n_videos=n,
        min_frames=min(frames),
        max_frames=max(frames),
        avg_frames=sum(frames) / n,
        # sizes are summarised per axis so min <= avg <= max holds for W and H alike
        min_size=(min(w for w, _ in sizes), min(h for _, h in sizes)),
        max_size=(max(w for w, _ in sizes), max(h for _, h in sizes)),
        avg_size=(sum(w for w, _ in sizes) / n, sum(h for _, h in sizes) / n),
        min_duration=min(durations),
        max_duration=max(durations),
        avg_duration=sum(durations) / n,
    )


def compute_stats(manifest: DatasetManifest) -> StatsTable:
    return StatsTable({lab: class_stats(es) for lab, es in manifest.by_label().items()})
