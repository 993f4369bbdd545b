"""Video data-engineering toolkit for stereotyped-gesture clip datasets."""

from .core import BoundingBox, ClassLabel, Detection, Frame, Provenance, VideoClip, frame_get

__all__ = ["BoundingBox", "ClassLabel", "Detection", "Frame", "Provenance", "VideoClip", "frame_get"]
__version__ = "0.1.0"
