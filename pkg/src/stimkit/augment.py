"""The six clip augmentations and the 7x dataset expansion built on them."""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .core import Frame, Provenance, VideoClip
from .dataset import (DatasetError, DatasetManifest, ManifestEntry, clip_relpath,
                      load_entry_clip, store_clip)
from .masking import round_half_up, to_uint8

log = logging.getLogger(__name__)


class TransformKind(enum.Enum):
    HFlip = "hflip"
    VFlip = "vflip"
    Upsample = "upsample"
    Rotate = "rotate"
    InvertColor = "invert"
    DownsampleTemporal = "downsample"


# original + one clip per transform
EXPANSION_FACTOR = 1 + len(TransformKind)


@dataclass(frozen=True)
class AugmentParams:
    alpha: float = 1.5
    theta_deg: float = 25.0
    beta: int = 2

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValueError(f"alpha must be > 1, got {self.alpha}")
        if isinstance(self.beta, bool) or int(self.beta) != self.beta or self.beta < 1:
            raise ValueError(f"beta must be an integer >= 1, got {self.beta}")
        object.__setattr__(self, "beta", int(self.beta))
        if not -360 < self.theta_deg < 360:
            raise ValueError(f"theta must lie in (-360, 360), got {self.theta_deg}")


def hflip(frame: Frame) -> Frame:
    return Frame(frame.pixels[:, ::-1])


def vflip(frame: Frame) -> Frame:
    return Frame(frame.pixels[::-1, :])


def invert_color(frame: Frame) -> Frame:
    return Frame(255 - frame.pixels)


def reflect101(idx: np.ndarray, n: int) -> np.ndarray:
    """Fold out-of-range indices back into [0, n) without repeating the edge."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def _snap(coords: np.ndarray) -> np.ndarray:
    # cos/sin of right angles are not exact in floating point
    nearest = np.round(coords)
    return np.where(np.abs(coords - nearest) < 1e-9, nearest, coords)


def rotate(frame: Frame, theta_deg: float) -> Frame:
    """Rotate about the frame centre by ``theta_deg``.

    A source point (x, y) lands at (x cos t - y sin t, x sin t + y cos t)
    relative to the centre ((W-1)/2, (H-1)/2). Each output pixel samples the
    inverse position bilinearly, with reflect-101 borders.
    """
    if theta_deg == 0:
        return frame
    h, w = frame.height, frame.width
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    src_x = _snap(c * dx + s * dy + cx)
    src_y = _snap(-s * dx + c * dy + cy)

    x0 = np.floor(src_x)
    y0 = np.floor(src_y)
    fx = (src_x - x0)[..., None]
    fy = (src_y - y0)[..., None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    xa, xb = reflect101(x0, w), reflect101(x0 + 1, w)
    ya, yb = reflect101(y0, h), reflect101(y0 + 1, h)

    p = frame.pixels.astype(np.float64)
    top = p[ya, xa] * (1 - fx) + p[ya, xb] * fx
    bottom = p[yb, xa] * (1 - fx) + p[yb, xb] * fx
    return Frame(to_uint8(top * (1 - fy) + bottom * fy))


def cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys convolution cubic; a = -0.5 is Catmull-Rom."""
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def _cubic_weights(n_in: int, n_out: int, alpha: float) -> np.ndarray:
    """(n_out, n_in) bicubic sampling matrix for source positions o / alpha.

    Positions past the last source sample are clamped to it and edge taps
    replicate the border pixel.
    """
    pos = np.minimum(np.arange(n_out, dtype=np.float64) / alpha, n_in - 1)
    base = np.floor(pos).astype(np.int64)
    frac = pos - base
    weights = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for tap in (-1, 0, 1, 2):
        wt = cubic_kernel(frac - tap)
        idx = np.clip(base + tap, 0, n_in - 1)
        np.add.at(weights, (rows, idx), wt)
    return weights


def upsampled_size(width: int, height: int, alpha: float) -> tuple[int, int]:
    return int(round_half_up(np.float64(alpha * width))), int(round_half_up(np.float64(alpha * height)))


def upsample(frame: Frame, alpha: float) -> Frame:
    if not alpha > 1:
        raise ValueError(f"alpha must be > 1, got {alpha}")
    nw, nh = upsampled_size(frame.width, frame.height, alpha)
    wy = _cubic_weights(frame.height, nh, alpha)
    wx = _cubic_weights(frame.width, nw, alpha)
    out = np.einsum("oh,hwc,pw->opc", wy, frame.pixels.astype(np.float64), wx, optimize=True)
    return Frame(to_uint8(out))


def downsample_temporal(clip: VideoClip, beta: int) -> VideoClip:
    """Keep frames 0, beta, 2*beta, ... and divide the frame rate by beta."""
    if int(beta) != beta or beta < 1:
        raise ValueError(f"beta must be an integer >= 1, got {beta}")
    beta = int(beta)
    if beta == 1:
        return clip
    return VideoClip(clip.frames[::beta], clip.fps / beta, clip.label, clip.clip_id, clip.provenance)


def _per_frame(fn: Callable[[Frame], Frame]) -> Callable[[VideoClip, AugmentParams], tuple[Frame, ...]]:
    return lambda clip, params: tuple(fn(f) for f in clip.frames)


_SPATIAL = {
    TransformKind.HFlip: _per_frame(hflip),
    TransformKind.VFlip: _per_frame(vflip),
    TransformKind.InvertColor: _per_frame(invert_color),
    TransformKind.Upsample: lambda clip, p: tuple(upsample(f, p.alpha) for f in clip.frames),
    TransformKind.Rotate: lambda clip, p: tuple(rotate(f, p.theta_deg) for f in clip.frames),
}


def derived_clip_id(clip_id: str, kind: TransformKind) -> str:
    return f"{clip_id}_{kind.value}"


def augment_clip(clip: VideoClip, kind: TransformKind, params: AugmentParams = AugmentParams()) -> VideoClip:
    """Apply one transform to a whole clip, tagging the result with its provenance."""
    new_id = derived_clip_id(clip.clip_id, kind)
    prov = Provenance(clip.clip_id, transform=kind.value)
    if kind is TransformKind.DownsampleTemporal:
        ds = downsample_temporal(clip, params.beta)
        return VideoClip(ds.frames, ds.fps, clip.label, new_id, prov)
    frames = _SPATIAL[kind](clip, params)
    return VideoClip(frames, clip.fps, clip.label, new_id, prov)


def expand_clip(clip: VideoClip, params: AugmentParams = AugmentParams(),
                kinds: tuple[TransformKind, ...] = tuple(TransformKind)) -> list[VideoClip]:
    """The original clip followed by one augmented clip per kind, in enum order."""
    order = [k for k in TransformKind if k in kinds]
    return [clip] + [augment_clip(clip, k, params) for k in order]


def _planned_entry(entry: ManifestEntry, kind: TransformKind, params: AugmentParams) -> ManifestEntry:
    new_id = derived_clip_id(entry.clip_id, kind)
    e = replace(entry, clip_id=new_id, path=clip_relpath(entry.label, new_id), split=None,
                provenance=Provenance(entry.clip_id, transform=kind.value))
    if kind is TransformKind.Upsample:
        w, h = upsampled_size(entry.width, entry.height, params.alpha)
        e = replace(e, width=w, height=h)
    elif kind is TransformKind.DownsampleTemporal:
        e = replace(e, frame_count=math.ceil(entry.frame_count / params.beta), fps=entry.fps / params.beta)
    return e


def plan_expansion(manifest: DatasetManifest, params: AugmentParams = AugmentParams(),
                   kinds: tuple[TransformKind, ...] = tuple(TransformKind)) -> DatasetManifest:
    """Entries ``expand_dataset`` would produce, computed from metadata alone."""
    order = [k for k in TransformKind if k in kinds]
    entries = []
    for entry in sorted(manifest.entries, key=lambda e: e.clip_id):
        entries.append(replace(entry, path=clip_relpath(entry.label, entry.clip_id), split=None))
        entries.extend(_planned_entry(entry, k, params) for k in order)
    return DatasetManifest(entries, manifest.schema_version)


@dataclass(frozen=True)
class ClipFailure:
    clip_id: str
    message: str


def expand_dataset(manifest: DatasetManifest, out_root: Path, params: AugmentParams = AugmentParams(),
                   kinds: tuple[TransformKind, ...] = tuple(TransformKind),
                   jobs: Optional[int] = None) -> tuple[DatasetManifest, list[ClipFailure]]:
    """Write every clip plus its augmented copies under ``out_root``.

    A clip that cannot be read is reported in the returned failure list and
    skipped; the rest still go through. Entries come out sorted by source
    clip_id, then transform order.
    """
    out_root = Path(out_root)

    def work(entry: ManifestEntry):
        try:
            clip = load_entry_clip(manifest, entry)
        except (DatasetError, OSError, ValueError) as exc:
            log.error("skipping clip %s: %s", entry.clip_id, exc)
            return ClipFailure(entry.clip_id, str(exc))
        return [store_clip(c, out_root) for c in expand_clip(clip, params, kinds)]

    sources = sorted(manifest.entries, key=lambda e: e.clip_id)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(work, sources))
    entries: list[ManifestEntry] = []
    failures: list[ClipFailure] = []
    for r in results:
        if isinstance(r, ClipFailure):
            failures.append(r)
        else:
            entries.extend(r)
    return DatasetManifest(entries, manifest.schema_version, base_dir=out_root), failures
