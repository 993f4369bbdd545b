"""Shared domain types: frames, clips, labels, boxes and detections.

Pixel grids are numpy arrays of shape (H, W, 3), dtype uint8, channel order
R, G, B. Indices are 0-based with row ``i`` downward and column ``j``
rightward.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np


class ClassLabel(enum.IntEnum):
    ArmFlapping = 0
    HeadBanging = 1
    Spinning = 2

    @classmethod
    def parse(cls, value: Any) -> "ClassLabel":
        """Accept a label name, its integer code, or a numeric string."""
        if isinstance(value, ClassLabel):
            return value
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            return cls(int(value))
        text = str(value).strip()
        if text.lstrip("-").isdigit():
            return cls(int(text))
        try:
            return cls[text]
        except KeyError:
            raise ValueError(f"unknown class label: {value!r}") from None


class Frame:
    """One immutable RGB image."""

    __slots__ = ("_pixels",)

    def __init__(self, pixels: Any):
        arr = np.asarray(pixels)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected an (H, W, 3) pixel grid, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("frame dimensions must be >= 1")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("channel values must lie in [0, 255]")
            if np.issubdtype(arr.dtype, np.floating) and not np.all(arr == np.floor(arr)):
                raise ValueError("channel values must be integers")
            arr = arr.astype(np.uint8)
        else:
            arr = arr.copy()
        arr.setflags(write=False)
        self._pixels = arr

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[Sequence[int]]]) -> "Frame":
        return cls(np.array(rows, dtype=np.int64))

    @classmethod
    def filled(cls, width: int, height: int, rgb: Sequence[int] = (0, 0, 0)) -> "Frame":
        if width < 1 or height < 1:
            raise ValueError("frame dimensions must be >= 1")
        return cls(np.broadcast_to(np.asarray(rgb, dtype=np.int64), (height, width, 3)))

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    @property
    def width(self) -> int:
        return self._pixels.shape[1]

    @property
    def height(self) -> int:
        return self._pixels.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        """(width, height)"""
        return self.width, self.height

    def get(self, i: int, j: int) -> tuple[int, int, int]:
        return frame_get(self, i, j)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Frame):
            return NotImplemented
        return self._pixels.shape == other._pixels.shape and bool(
            np.array_equal(self._pixels, other._pixels)
        )

    def __hash__(self) -> int:
        return hash((self._pixels.shape, self._pixels.tobytes()))

    def __repr__(self) -> str:
        return f"Frame({self.width}x{self.height})"


def frame_get(frame: Frame, i: int, j: int) -> tuple[int, int, int]:
    """Pixel at row ``i``, column ``j``. Negative indices are out of bounds."""
    if not (0 <= i < frame.height and 0 <= j < frame.width):
        raise IndexError(f"pixel ({i}, {j}) outside {frame.width}x{frame.height} frame")
    r, g, b = frame.pixels[i, j]
    return int(r), int(g), int(b)


@dataclass(frozen=True)
class Provenance:
    """Where a derived clip came from."""

    source: str
    transform: Optional[str] = None
    segment: Optional[tuple[int, int]] = None

    def to_dict(self) -> dict:
        d: dict = {"source": self.source}
        if self.transform is not None:
            d["transform"] = self.transform
        if self.segment is not None:
            d["segment"] = list(self.segment)
        return d

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> Optional["Provenance"]:
        if d is None:
            return None
        seg = d.get("segment")
        return cls(d["source"], d.get("transform"), tuple(seg) if seg is not None else None)


@dataclass(frozen=True)
class VideoClip:
    frames: tuple[Frame, ...]
    fps: float
    label: ClassLabel
    clip_id: str
    provenance: Optional[Provenance] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "label", ClassLabel.parse(self.label))
        if not self.frames:
            raise ValueError("a clip needs at least one frame")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        size = self.frames[0].size
        for k, f in enumerate(self.frames):
            if f.size != size:
                raise ValueError(
                    f"clip {self.clip_id}: frame {k} is {f.width}x{f.height}, "
                    f"expected {size[0]}x{size[1]}"
                )

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    @property
    def duration(self) -> float:
        return len(self.frames) / self.fps


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if min(self.x1, self.y1, self.x2, self.y2) < 0:
            raise ValueError(f"negative box coordinate in {self.as_tuple()}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"box {self.as_tuple()} has no positive area")

    def as_tuple(self) -> tuple:
        return (self.x1, self.y1, self.x2, self.y2)

    def pixel_bounds(self, width: int, height: int) -> tuple[int, int, int, int]:
        """Integer half-open bounds (x1, y1, x2, y2) clamped to a width x height frame.

        Fractional coordinates are truncated, as a detector's float box is cast
        to pixel indices before drawing. The result may be empty (x1 >= x2).
        """
        x1, y1 = int(self.x1), int(self.y1)
        x2 = min(int(self.x2), width)
        y2 = min(int(self.y2), height)
        return x1, y1, x2, y2


@dataclass(frozen=True)
class Detection:
    bbox: BoundingBox
    conf: float
    cls: int

    def __post_init__(self):
        if not 0.0 <= self.conf <= 1.0:
            raise ValueError(f"confidence {self.conf} outside [0, 1]")
