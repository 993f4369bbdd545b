"""Detection post-processing: largest-box selection, rectangle masking,
cropping and area-interpolated resizing of clip frames."""

from __future__ import annotations

import enum
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import BoundingBox, Detection, Frame, VideoClip
from .dataset import DatasetError, DatasetManifest, ManifestEntry, load_entry_clip, store_clip

log = logging.getLogger(__name__)


class NoDetectionPolicy(str, enum.Enum):
    PASSTHROUGH = "passthrough"
    BLACKOUT = "blackout"
    SKIP_FRAME = "skip_frame"


@dataclass(frozen=True)
class MaskingConfig:
    target_size: tuple[int, int] = (224, 224)
    on_no_detection: NoDetectionPolicy = NoDetectionPolicy.PASSTHROUGH

    def __post_init__(self):
        w, h = self.target_size
        if w < 1 or h < 1:
            raise ValueError(f"target size must be >= 1 in both axes, got {self.target_size}")
        object.__setattr__(self, "target_size", (int(w), int(h)))
        object.__setattr__(self, "on_no_detection", NoDetectionPolicy(self.on_no_detection))


@dataclass(frozen=True)
class BinaryMask:
    width: int
    height: int
    values: np.ndarray  # (H, W) uint8, entries 0 or 255

    def __post_init__(self):
        if self.values.shape != (self.height, self.width):
            raise ValueError("mask values do not match mask dimensions")
        if not np.all((self.values == 0) | (self.values == 255)):
            raise ValueError("mask values must be 0 or 255")

    @property
    def on_count(self) -> int:
        return int(np.count_nonzero(self.values == 255))


def box_area(box: BoundingBox) -> float:
    return (box.x2 - box.x1) * (box.y2 - box.y1)


def select_largest(detections: Sequence[Detection]) -> Optional[BoundingBox]:
    """Largest-area box, or None when there are no detections.

    Uses a strict ``>`` so the earliest of several equal-area boxes is kept.
    """
    max_area = 0
    max_box = None
    for d in detections:
        area = box_area(d.bbox)
        if area > max_area:
            max_area = area
            max_box = d.bbox
    return max_box


def build_mask(width: int, height: int, box: BoundingBox) -> BinaryMask:
    if width < 1 or height < 1:
        raise ValueError("mask dimensions must be >= 1")
    values = np.zeros((height, width), dtype=np.uint8)
    x1, y1, x2, y2 = box.pixel_bounds(width, height)
    if x1 < x2 and y1 < y2:
        values[y1:y2, x1:x2] = 255
    values.setflags(write=False)
    return BinaryMask(width, height, values)


def apply_mask(frame: Frame, mask: BinaryMask) -> Frame:
    if (mask.width, mask.height) != frame.size:
        raise ValueError(
            f"mask is {mask.width}x{mask.height} but frame is {frame.width}x{frame.height}"
        )
    keep = (mask.values == 255)[:, :, None]
    return Frame(np.where(keep, frame.pixels, 0).astype(np.uint8))


def crop(frame: Frame, box: BoundingBox) -> Frame:
    x1, y1, x2, y2 = box.pixel_bounds(frame.width, frame.height)
    if x1 >= x2 or y1 >= y2:
        raise ValueError(f"box {box.as_tuple()} does not intersect the {frame.width}x{frame.height} frame")
    return Frame(frame.pixels[y1:y2, x1:x2])


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix; row o holds the fractional overlap of each source
    cell with output cell o's footprint, normalised to sum to 1."""
    lo = np.arange(n_out, dtype=np.float64)[:, None] * n_in / n_out
    hi = np.arange(1, n_out + 1, dtype=np.float64)[:, None] * n_in / n_out
    k = np.arange(n_in, dtype=np.float64)[None, :]
    overlap = np.clip(np.minimum(hi, k + 1) - np.maximum(lo, k), 0.0, None)
    return overlap / (hi - lo)


def round_half_up(values: np.ndarray) -> np.ndarray:
    # the epsilon absorbs float error on exact .5 cases; real ties sit far above it
    return np.floor(values + 0.5 + 1e-9)


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(round_half_up(values), 0, 255).astype(np.uint8)


def resize_area(frame: Frame, target: tuple[int, int]) -> Frame:
    """Box-filter resample to ``target`` = (width, height).

    Each output pixel is the area-weighted mean of the source region it
    covers, so an exact k-fold reduction yields k x k block means.
    """
    tw, th = int(target[0]), int(target[1])
    if tw < 1 or th < 1:
        raise ValueError(f"target size must be >= 1 in both axes, got {target}")
    if (tw, th) == frame.size:
        return frame
    wy = _area_weights(frame.height, th)
    wx = _area_weights(frame.width, tw)
    src = frame.pixels.astype(np.float64)
    out = np.einsum("oh,hwc,pw->opc", wy, src, wx, optimize=True)
    return Frame(to_uint8(out))


@dataclass
class FrameRecord:
    frame_index: int
    box: Optional[tuple] = None
    area: Optional[float] = None
    conf: Optional[float] = None
    cls: Optional[int] = None
    n_detections: int = 0
    policy: Optional[str] = None  # set when the no-detection policy fired

    def to_dict(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "n_detections": self.n_detections,
            "box": list(self.box) if self.box is not None else None,
            "area": self.area,
            "conf": self.conf,
            "cls": self.cls,
            "policy": self.policy,
        }


@dataclass
class ProcessReport:
    clip_id: str
    frames: list[FrameRecord] = field(default_factory=list)

    @property
    def policy_hits(self) -> int:
        return sum(1 for r in self.frames if r.policy is not None)

    @property
    def frames_out(self) -> int:
        return sum(1 for r in self.frames if r.policy != NoDetectionPolicy.SKIP_FRAME.value)

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "frames_in": len(self.frames),
            "frames_out": self.frames_out,
            "policy_hits": self.policy_hits,
            "frames": [r.to_dict() for r in self.frames],
        }


class EmptyOutputError(ValueError):
    """Every frame of a clip was dropped by the skip_frame policy."""


def process_clip(
    clip: VideoClip,
    detections: Sequence[Sequence[Detection]],
    config: MaskingConfig = MaskingConfig(),
) -> tuple[VideoClip, ProcessReport]:
    """Mask every frame to its largest detection and resize to the target size."""
    if len(detections) != clip.frame_count:
        raise ValueError(
            f"clip {clip.clip_id}: {len(detections)} detection lists for {clip.frame_count} frames"
        )
    tw, th = config.target_size
    report = ProcessReport(clip.clip_id)
    out: list[Frame] = []
    for idx, (frame, dets) in enumerate(zip(clip.frames, detections)):
        rec = FrameRecord(idx, n_detections=len(dets))
        box = select_largest(dets)
        if box is not None:
            chosen = next(d for d in dets if d.bbox is box)
            rec.box, rec.area = box.as_tuple(), box_area(box)
            rec.conf, rec.cls = chosen.conf, chosen.cls
            masked = apply_mask(frame, build_mask(frame.width, frame.height, box))
            out.append(resize_area(masked, (tw, th)))
        else:
            policy = config.on_no_detection
            rec.policy = policy.value
            if policy is NoDetectionPolicy.PASSTHROUGH:
                out.append(resize_area(frame, (tw, th)))
            elif policy is NoDetectionPolicy.BLACKOUT:
                out.append(Frame.filled(tw, th))
        report.frames.append(rec)
    if not out:
        raise EmptyOutputError(f"clip {clip.clip_id}: skip_frame dropped every frame")
    result = VideoClip(out, clip.fps, clip.label, clip.clip_id, clip.provenance)
    return result, report


def parse_detection_line(line: str) -> tuple[int, list[Detection]]:
    obj = json.loads(line)
    dets = []
    for d in obj.get("detections", []):
        bbox = BoundingBox(d["x1"], d["y1"], d["x2"], d["y2"])
        dets.append(Detection(bbox, float(d.get("conf", 1.0)), int(d.get("cls", 0))))
    return int(obj["frame_index"]), dets


def read_detections(path: Path, frame_count: int) -> list[list[Detection]]:
    """Per-frame detections from a JSON-lines file.

    Frames missing from the file get an empty list. A missing file means no
    detections at all.
    """
    per_frame: list[list[Detection]] = [[] for _ in range(frame_count)]
    path = Path(path)
    if not path.exists():
        return per_frame
    seen: set[int] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                idx, dets = parse_detection_line(line)
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad detection record: {exc}") from exc
            if not 0 <= idx < frame_count:
                raise ValueError(f"{path}:{lineno}: frame_index {idx} outside clip of {frame_count} frames")
            if idx in seen:
                raise ValueError(f"{path}:{lineno}: duplicate frame_index {idx}")
            seen.add(idx)
            per_frame[idx] = dets
    return per_frame


def format_detection_line(frame_index: int, detections: Sequence[Detection]) -> str:
    return json.dumps(
        {
            "frame_index": frame_index,
            "detections": [
                {"x1": d.bbox.x1, "y1": d.bbox.y1, "x2": d.bbox.x2, "y2": d.bbox.y2,
                 "conf": d.conf, "cls": d.cls}
                for d in detections
            ],
        }
    )


def detections_path(detections_dir: Path, clip_id: str) -> Path:
    return Path(detections_dir) / f"{clip_id}.jsonl"


def mask_dataset(manifest: DatasetManifest, detections_dir: Path, out_root: Path,
                 config: MaskingConfig = MaskingConfig(),
                 jobs: Optional[int] = None) -> tuple[DatasetManifest, list[ProcessReport], list[tuple[str, str]]]:
    """Mask and resize every clip of ``manifest`` into ``out_root``.

    Detections for clip ``c`` are read from ``<detections_dir>/c.jsonl``; a
    clip without a file is treated as having no detections anywhere. Clips
    that fail are returned as (clip_id, message) pairs and left out.
    """
    out_root = Path(out_root)

    def work(entry: ManifestEntry):
        try:
            clip = load_entry_clip(manifest, entry)
            dets = read_detections(detections_path(detections_dir, entry.clip_id), clip.frame_count)
            masked, report = process_clip(clip, dets, config)
        except (DatasetError, OSError, ValueError) as exc:
            log.error("skipping clip %s: %s", entry.clip_id, exc)
            return entry.clip_id, str(exc)
        return store_clip(masked, out_root), report

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(work, manifest.entries))
    entries, reports, failures = [], [], []
    for a, b in results:
        if isinstance(a, ManifestEntry):
            entries.append(a)
            reports.append(b)
        else:
            failures.append((a, b))
    return DatasetManifest(entries, manifest.schema_version, base_dir=out_root), reports, failures
