"""Online frame-by-frame association engine.

Appearance-only tracking: history tracks and current detections are compared
with a blend of bi-directional softmax and cosine similarity, matched
greedily (optionally by optimal assignment), and tracks live for a fixed
memory window while unmatched. Track categories are decided afterwards by
majority vote over the whole trajectory.

A TrackerState belongs to exactly one sequence run; distinct sequences may
be tracked concurrently with independent states.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import BoundingBox, Detection, FrameObservations, VideoSequence, nms
from .promptattn import ClassEmbeddingBank, FusionWeights, class_affinity, fuse_probabilities

__all__ = [
    "Track",
    "TrackerConfig",
    "TrackerState",
    "AssociationResult",
    "TrackRow",
    "bisoftmax_similarity",
    "combined_similarity",
    "associate_frame",
    "update_embedding",
    "vote_trajectory_category",
    "classify_detection",
    "track_sequence",
]


@dataclass(eq=False)
class Track:
    """One live trajectory and its appearance memory."""

    track_id: int
    embedding: np.ndarray  # unit vector, exponential moving average
    last_box: BoundingBox
    age: int = 0  # frames since last match
    class_votes: Dict[int, int] = field(default_factory=dict)
    confidence: float = 0.0


@dataclass(frozen=True)
class TrackerConfig:
    memory_frames: int = 10
    match_threshold: float = 0.35
    new_track_confidence: float = 0.5
    momentum: float = 0.8
    nms_iou: float = 0.5
    bisoftmax_temperature: float = 1.0
    use_hungarian: bool = False

    def __post_init__(self) -> None:
        if self.memory_frames < 0:
            raise ValueError("memory_frames must be >= 0")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum must be in [0, 1]")
        if self.bisoftmax_temperature <= 0.0:
            raise ValueError("bisoftmax_temperature must be positive")


@dataclass
class TrackerState:
    config: TrackerConfig = field(default_factory=TrackerConfig)
    active_tracks: List[Track] = field(default_factory=list)
    next_id: int = 0


@dataclass
class AssociationResult:
    """Outcome of one frame: detection index -> track id, plus lifecycle events."""

    assignments: Dict[int, int]
    new_tracks: List[Track]
    dropped_tracks: List[Track]


@dataclass
class TrackRow:
    """One output record of the tracker (class decided by trajectory vote)."""

    frame: int
    track_id: int
    class_id: int
    box: BoundingBox
    confidence: float


def bisoftmax_similarity(track_embeddings: np.ndarray, det_embeddings: np.ndarray,
                         temperature: float = 1.0) -> np.ndarray:
    """Average of the track->detection and detection->track softmax maps.

    Entries lie in (0, 1]; a single track against a single detection is
    exactly 1 because both softmaxes are degenerate.
    """
    t = np.atleast_2d(np.asarray(track_embeddings, dtype=np.float64))
    d = np.atleast_2d(np.asarray(det_embeddings, dtype=np.float64))
    if t.size == 0 or d.size == 0:
        return np.zeros((t.shape[0] if t.size else 0, d.shape[0] if d.size else 0))
    if t.shape[1] != d.shape[1]:
        raise ValueError(f"embedding dims differ: {t.shape[1]} vs {d.shape[1]}")
    logits = (t @ d.T) * temperature
    row = np.exp(logits - logits.max(axis=1, keepdims=True))
    row /= row.sum(axis=1, keepdims=True)
    col = np.exp(logits - logits.max(axis=0, keepdims=True))
    col /= col.sum(axis=0, keepdims=True)
    return 0.5 * (row + col)


def combined_similarity(bisoftmax: np.ndarray, cosine: np.ndarray) -> np.ndarray:
    """Mean of the bi-softmax score and the cosine remapped to [0, 1]."""
    b = np.asarray(bisoftmax, dtype=np.float64)
    c = np.asarray(cosine, dtype=np.float64)
    if b.shape != c.shape:
        raise ValueError(f"shape mismatch: {b.shape} vs {c.shape}")
    return 0.5 * (b + (1.0 + c) / 2.0)


def update_embedding(track: Track, det_embedding: np.ndarray, momentum: float) -> Track:
    """Blend the track memory with a matched detection and renormalize."""
    if not 0.0 <= momentum <= 1.0:
        raise ValueError("momentum must be in [0, 1]")
    mixed = momentum * track.embedding + (1.0 - momentum) * np.asarray(det_embedding, float)
    norm = float(np.linalg.norm(mixed))
    if norm == 0.0:
        return track
    return replace(track, embedding=mixed / norm)


def vote_trajectory_category(track: Track) -> int:
    """Most frequent voted category; ties break toward the lowest id."""
    if not track.class_votes:
        raise ValueError(f"track {track.track_id} has no category votes")
    return min(track.class_votes, key=lambda c: (-track.class_votes[c], c))


def _match_greedy(sim: np.ndarray, threshold: float) -> List[Tuple[int, int]]:
    order = sorted(((i, j) for i in range(sim.shape[0]) for j in range(sim.shape[1])),
                   key=lambda ij: (-sim[ij[0], ij[1]], ij[0], ij[1]))
    used_t, used_d = set(), set()
    matches = []
    for i, j in order:
        if sim[i, j] <= threshold:
            break
        if i in used_t or j in used_d:
            continue
        matches.append((i, j))
        used_t.add(i)
        used_d.add(j)
    return matches


def _match_hungarian(sim: np.ndarray, threshold: float) -> List[Tuple[int, int]]:
    from scipy.optimize import linear_sum_assignment

    rows, cols = linear_sum_assignment(-sim)
    return [(int(i), int(j)) for i, j in zip(rows, cols) if sim[i, j] > threshold]


def associate_frame(state: TrackerState, frame: FrameObservations,
                    det_embeddings: np.ndarray,
                    det_classes: Optional[Sequence[int]] = None) -> AssociationResult:
    """Match one frame of (already NMS-filtered) detections into the state.

    Matches require a combined similarity strictly above the threshold and
    are one-to-one. Matched detections are always kept as outputs, even at
    low confidence; unmatched detections spawn a track only above the
    new-track confidence gate. Unmatched tracks age and are dropped once the
    memory window is exceeded.
    """
    cfg = state.config
    dets = frame.detections
    det_embeddings = np.atleast_2d(np.asarray(det_embeddings, dtype=np.float64)) \
        if len(dets) else np.zeros((0, 0))
    if det_embeddings.shape[0] != len(dets):
        raise ValueError("one embedding row per detection required")

    matches: List[Tuple[int, int]] = []
    if state.active_tracks and len(dets):
        t_emb = np.stack([t.embedding for t in state.active_tracks])
        bis = bisoftmax_similarity(t_emb, det_embeddings, cfg.bisoftmax_temperature)
        cos = t_emb @ det_embeddings.T
        sim = combined_similarity(bis, cos)
        matcher = _match_hungarian if cfg.use_hungarian else _match_greedy
        matches = matcher(sim, cfg.match_threshold)

    assignments: Dict[int, int] = {}
    matched_tracks = set()
    for ti, dj in matches:
        track = state.active_tracks[ti]
        det = dets[dj]
        updated = update_embedding(track, det_embeddings[dj], cfg.momentum)
        track.embedding = updated.embedding
        track.last_box = det.box
        track.age = 0
        track.confidence = det.confidence
        if det_classes is not None and det_classes[dj] >= 0:
            track.class_votes[det_classes[dj]] = track.class_votes.get(det_classes[dj], 0) + 1
        assignments[dj] = track.track_id
        matched_tracks.add(ti)

    dropped: List[Track] = []
    survivors: List[Track] = []
    for ti, track in enumerate(state.active_tracks):
        if ti in matched_tracks:
            survivors.append(track)
            continue
        track.age += 1
        if track.age > cfg.memory_frames:
            dropped.append(track)
        else:
            survivors.append(track)

    new_tracks: List[Track] = []
    for dj, det in enumerate(dets):
        if dj in assignments:
            continue
        if det.confidence > cfg.new_track_confidence:
            votes: Dict[int, int] = {}
            if det_classes is not None and det_classes[dj] >= 0:
                votes[det_classes[dj]] = 1
            track = Track(track_id=state.next_id, embedding=np.asarray(det_embeddings[dj]),
                          last_box=det.box, age=0, class_votes=votes,
                          confidence=det.confidence)
            state.next_id += 1
            new_tracks.append(track)
            assignments[dj] = track.track_id

    state.active_tracks = survivors + new_tracks
    return AssociationResult(assignments=assignments, new_tracks=new_tracks,
                             dropped_tracks=dropped)


def classify_detection(det: Detection, bank: ClassEmbeddingBank,
                       fusion: FusionWeights = FusionWeights()) -> int:
    """Fused text/image class prediction; -1 when background wins."""
    def _probs(embedding: np.ndarray) -> np.ndarray:
        logits = class_affinity(embedding, bank) / bank.temperature
        z = np.exp(logits - logits.max())
        return z / z.sum()

    p_text = _probs(det.text_embedding)
    p_img = _probs(det.image_embedding)
    is_base = np.concatenate(([True], bank.base_mask))  # background fuses like a base class
    fused = fuse_probabilities(p_text, p_img, is_base, fusion)
    best = int(np.argmax(fused))
    return best - 1 if best > 0 else -1


def track_sequence(video: VideoSequence, embed_fn, bank: Optional[ClassEmbeddingBank] = None,
                   config: TrackerConfig = TrackerConfig(),
                   fusion: FusionWeights = FusionWeights()) -> List[TrackRow]:
    """Run the tracker over a whole sequence and emit voted output rows.

    ``embed_fn`` maps a raw-feature matrix [n, feature_dim] to association
    embeddings with unit rows (typically ``AssociationHead.embed``). When a
    class bank is given each detection is classified and the per-track
    majority class is written retroactively onto every row of the track;
    without a bank rows carry class -1.
    """
    state = TrackerState(config=config)
    rows: List[TrackRow] = []
    finished: Dict[int, Track] = {}
    for frame in video.frames:
        dets = nms(frame.detections, config.nms_iou)
        kept = FrameObservations(frame_index=frame.frame_index, detections=dets)
        if dets:
            emb = embed_fn(np.stack([d.raw_feature for d in dets]))
            classes = [classify_detection(d, bank, fusion) if bank is not None else -1
                       for d in dets]
        else:
            emb = np.zeros((0, 0))
            classes = []
        result = associate_frame(state, kept, emb, classes)
        for dj, tid in result.assignments.items():
            rows.append(TrackRow(frame=frame.frame_index, track_id=tid, class_id=-1,
                                 box=dets[dj].box, confidence=dets[dj].confidence))
        for track in result.dropped_tracks:
            finished[track.track_id] = track
    for track in state.active_tracks:
        finished[track.track_id] = track

    voted = {tid: (vote_trajectory_category(t) if t.class_votes else -1)
             for tid, t in finished.items()}
    for row in rows:
        row.class_id = voted.get(row.track_id, -1)
    return rows
