"""Training-sequence sampling and category clustering.

Videos are split into fixed-length segments; one random contiguous
sub-segment per segment is concatenated into a training sequence, so the
sequence carries both adjacent frame pairs and long-gap pairs. Detections
are grouped into pseudo-categories by k-means over their classification
embeddings before the consistency losses see them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import Detection

__all__ = [
    "SamplingPlan",
    "ClusterModel",
    "split_segments",
    "sample_training_sequence",
    "enumerate_groups",
    "kmeans_cluster",
    "category_groups",
]


@dataclass(frozen=True)
class SamplingPlan:
    """Knobs of the long-short interval sampler."""

    segment_length: int = 24
    sub_min: int = 2
    sub_max: int = 8
    frames_per_sequence: int = 24  # hard cap on sampled frames per sequence
    kmeans_k: Optional[int] = None  # None: resolved from the class bank, capped at 8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.segment_length <= 1:
            raise ValueError("segment_length must be > 1")
        if self.sub_min < 2:
            raise ValueError("sub_min must be >= 2")
        if self.sub_max < self.sub_min or self.sub_max > self.segment_length:
            raise ValueError("need sub_min <= sub_max <= segment_length")
        if self.frames_per_sequence < 3:
            raise ValueError("frames_per_sequence must be >= 3 (triples need three frames)")


@dataclass
class ClusterModel:
    """k-means result: centroids plus one cluster id per input row."""

    k: int
    centroids: np.ndarray  # [k, dim]
    assignments: np.ndarray  # [n] int
    cost_history: List[float] = field(default_factory=list)

    @property
    def cost(self) -> float:
        return self.cost_history[-1] if self.cost_history else float("nan")


def split_segments(video_length: int, segment_length: int) -> List[Tuple[int, int]]:
    """Consecutive [start, end) ranges of the given length.

    A final remainder shorter than 2 frames is merged into the previous
    segment; longer remainders stand alone. A video shorter than one segment
    is a single range.
    """
    if video_length < 1:
        raise ValueError("video_length must be >= 1")
    if segment_length < 2:
        raise ValueError("segment_length must be >= 2")
    bounds = list(range(0, video_length, segment_length))
    segments = [(s, min(s + segment_length, video_length)) for s in bounds]
    if len(segments) > 1 and segments[-1][1] - segments[-1][0] < 2:
        last = segments.pop()
        segments[-1] = (segments[-1][0], last[1])
    return segments


def sample_training_sequence(segments: Sequence[Tuple[int, int]], plan: SamplingPlan,
                             rng: Optional[np.random.Generator] = None) -> List[int]:
    """One contiguous random sub-segment per segment, concatenated in order.

    Returns strictly increasing frame indices, truncated to the plan's
    frames_per_sequence cap.
    """
    if rng is None:
        rng = np.random.default_rng(plan.seed)
    indices: List[int] = []
    for start, end in segments:
        length = end - start
        lo = min(plan.sub_min, length)
        hi = min(plan.sub_max, length)
        sub_len = int(rng.integers(lo, hi + 1))
        sub_start = start + int(rng.integers(0, length - sub_len + 1))
        indices.extend(range(sub_start, sub_start + sub_len))
    return indices[: plan.frames_per_sequence]


def enumerate_groups(n: int) -> Tuple[List[Tuple[int, int]], List[Tuple[int, int, int]]]:
    """All unordered index pairs and triples of range(n), lexicographic."""
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    triples = [(i, j, k) for i in range(n) for j in range(i + 1, n) for k in range(j + 1, n)]
    return pairs, triples


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(0, n))
    centroids[0] = points[first]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for c in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            # all remaining points coincide with a centroid; pick any
            idx = int(rng.integers(0, n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[c] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centroids[c]) ** 2, axis=1))
    return centroids


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator,
           max_iter: int) -> ClusterModel:
    n = points.shape[0]
    centroids = _kmeans_pp_init(points, k, rng)
    assignments = np.full(n, -1, dtype=np.int64)
    costs: List[float] = []
    for _ in range(max_iter):
        d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(d2, axis=1)
        for c in range(k):
            if not np.any(new_assign == c):
                worst = int(np.argmax(d2[np.arange(n), new_assign]))
                centroids[c] = points[worst]
                new_assign[worst] = c
                d2[:, c] = np.sum((points - centroids[c]) ** 2, axis=1)
        costs.append(float(np.sum((points - centroids[new_assign]) ** 2)))
        if np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
        for c in range(k):
            members = points[assignments == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
    final_cost = float(np.sum((points - centroids[assignments]) ** 2))
    if not costs or costs[-1] != final_cost:
        costs.append(final_cost)
    return ClusterModel(k=k, centroids=centroids, assignments=assignments,
                        cost_history=costs)


def kmeans_cluster(features: np.ndarray, k: int, seed: int = 0,
                   max_iter: int = 100, n_init: int = 4) -> ClusterModel:
    """Lloyd's algorithm from k-means++ seeding, deterministic under the seed.

    Runs ``n_init`` independently seeded restarts and keeps the lowest-cost
    result (first wins ties). Empty clusters are repaired by re-seeding them
    on the point farthest from its assigned centroid.
    """
    points = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n = points.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)
    best: Optional[ClusterModel] = None
    for _ in range(max(1, n_init)):
        model = _lloyd(points, k, rng, max_iter)
        if best is None or model.cost < best.cost:
            best = model
    return best


def category_groups(frame_detections: Sequence[Sequence[Detection]],
                    model: ClusterModel) -> Dict[int, Dict[int, List[int]]]:
    """Per-cluster, per-frame detection indices.

    ``model.assignments`` must cover the detections flattened in frame
    order. Frames where a cluster has no members are omitted for that
    cluster, so each cluster maps only to frames it actually appears in.
    """
    counts = sum(len(dets) for dets in frame_detections)
    if counts != len(model.assignments):
        raise ValueError("cluster assignments do not cover all detections")
    groups: Dict[int, Dict[int, List[int]]] = {}
    flat = 0
    for frame_pos, dets in enumerate(frame_detections):
        for det_idx in range(len(dets)):
            cluster = int(model.assignments[flat])
            groups.setdefault(cluster, {}).setdefault(frame_pos, []).append(det_idx)
            flat += 1
    return groups
