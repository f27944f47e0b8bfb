"""Domain records and bounding-box geometry shared by every other module.

Boxes are center-x, center-y, width, height in pixels everywhere; corner
coordinates exist only inside the IoU computation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "BoundingBox",
    "Detection",
    "FrameObservations",
    "GroundTruthBox",
    "VideoSequence",
    "iou",
    "iou_matrix",
    "nms",
    "unit",
]

_NORM_ATOL = 1e-6


def unit(v: Sequence[float]) -> np.ndarray:
    """Return v as a float64 L2-normalized vector."""
    arr = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(arr)
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return arr / n


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, (x, y) is the center in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0.0 and self.h > 0.0):
            raise ValueError(f"box sides must be positive, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> Tuple[float, float, float, float]:
        """(x1, y1, x2, y2) corner coordinates."""
        return (
            self.x - self.w / 2.0,
            self.y - self.h / 2.0,
            self.x + self.w / 2.0,
            self.y + self.h / 2.0,
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)


@dataclass(eq=False)
class Detection:
    """One candidate region in one frame.

    ``text_embedding`` and ``image_embedding`` are unit vectors in the shared
    class-embedding space; ``raw_feature`` is the unnormalized feature the
    association head consumes. ``class_label`` is the ground-truth category
    when available (training), -1 meaning background.
    """

    box: BoundingBox
    confidence: float
    text_embedding: np.ndarray
    image_embedding: np.ndarray
    raw_feature: np.ndarray
    class_label: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        self.text_embedding = np.asarray(self.text_embedding, dtype=np.float64)
        self.image_embedding = np.asarray(self.image_embedding, dtype=np.float64)
        self.raw_feature = np.asarray(self.raw_feature, dtype=np.float64)
        for name, emb in (("text_embedding", self.text_embedding),
                          ("image_embedding", self.image_embedding)):
            norm = float(np.linalg.norm(emb))
            if abs(norm - 1.0) > _NORM_ATOL:
                raise ValueError(f"{name} must be unit length, norm={norm!r}")


@dataclass
class FrameObservations:
    """All detections observed in one frame."""

    frame_index: int
    detections: List[Detection] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise ValueError("frame_index must be >= 0")


@dataclass(frozen=True)
class GroundTruthBox:
    """Annotated box: identity is stable across the whole sequence."""

    box: BoundingBox
    track_id: int
    class_id: int


@dataclass
class VideoSequence:
    """Ordered frames plus (optionally) per-frame ground truth keyed by frame index."""

    frames: List[FrameObservations]
    ground_truth: Optional[Dict[int, List[GroundTruthBox]]] = None

    def __post_init__(self) -> None:
        indices = [f.frame_index for f in self.frames]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError("frames must be sorted by strictly increasing frame_index")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def frame_indices(self) -> List[int]:
        return [f.frame_index for f in self.frames]


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_matrix(boxes_a: Sequence[BoundingBox], boxes_b: Sequence[BoundingBox]) -> np.ndarray:
    """Pairwise IoU, shape (len(boxes_a), len(boxes_b))."""
    out = np.zeros((len(boxes_a), len(boxes_b)), dtype=np.float64)
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = iou(a, b)
    return out


def nms(dets: Sequence[Detection], iou_threshold: float) -> List[Detection]:
    """Greedy class-agnostic non-maximum suppression.

    Returns survivors sorted by descending confidence; a box is suppressed
    when its IoU with an already kept, higher-confidence box exceeds
    ``iou_threshold``. Confidence ties break toward the earlier input index.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    kept: List[int] = []
    for i in order:
        if all(iou(dets[i].box, dets[j].box) <= iou_threshold for j in kept):
            kept.append(i)
    return [dets[i] for i in kept]
