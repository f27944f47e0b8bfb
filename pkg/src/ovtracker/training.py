"""End-to-end training loop and the ablation harness.

Each step samples a long-short training sequence, clusters the sampled
detections into pseudo-categories on their text embeddings, builds
per-cluster feature groups with box-overlap targets, and applies one
gradient-descent update to the association head.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .consistency import (AssociationHead, ConsistencyConfig, ConsistencyGroup,
                          assignment_matrix, loss_and_gradient, sgd_step)
from .core import Detection, iou_matrix
from .metrics import MetricReport, evaluation_report
from .sampling import (SamplingPlan, category_groups, enumerate_groups, kmeans_cluster,
                       sample_training_sequence, split_segments)
from .synth import Scenario
from .tracker import TrackerConfig, track_sequence

__all__ = [
    "TrainingRecord",
    "AblationVariant",
    "AblationRow",
    "DEFAULT_VARIANTS",
    "build_training_groups",
    "train_association_head",
    "evaluate_scenario",
    "run_ablation",
]

DEFAULT_EMBED_DIM = 32
DEFAULT_LEARNING_RATE = 1.0


@dataclass(frozen=True)
class TrainingRecord:
    step: int
    intra: float
    inter: float
    total: float


def build_training_groups(frame_detections: Sequence[Sequence[Detection]],
                          config: ConsistencyConfig, k: int,
                          kmeans_seed: int,
                          frame_indices: Optional[Sequence[int]] = None,
                          ) -> List[ConsistencyGroup]:
    """Assemble the loss groups for one sampled training sequence.

    Per-category clusters (k-means on the text embeddings) drive the margin
    consistency terms over every frame pair and triple. The box-overlap BCE
    targets live in one whole-frame group restricted to adjacent video
    frames, where spatial continuity is meaningful; ``frame_indices`` maps
    sampled positions back to original frame numbers for that adjacency
    test.
    """
    all_dets = [d for dets in frame_detections for d in dets]
    if len(all_dets) < 2:
        return []
    if frame_indices is None:
        frame_indices = list(range(len(frame_detections)))
    k = max(1, min(k, len(all_dets)))
    text = np.stack([d.text_embedding for d in all_dets])
    model = kmeans_cluster(text, k=k, seed=kmeans_seed)
    groups: List[ConsistencyGroup] = []
    for cluster_frames in category_groups(frame_detections, model).values():
        frame_positions = sorted(cluster_frames)
        if len(frame_positions) < 2:
            continue  # consistency needs the cluster in at least two frames
        features = []
        for pos in frame_positions:
            members = cluster_frames[pos]
            features.append(np.stack([frame_detections[pos][i].raw_feature for i in members]))
        pairs, triples = enumerate_groups(len(frame_positions))
        groups.append(ConsistencyGroup(features=features, pairs=pairs, triples=triples))

    frame_positions = [pos for pos, dets in enumerate(frame_detections) if dets]
    adjacent = [(a, b) for a, b in zip(frame_positions, frame_positions[1:])
                if frame_indices[b] - frame_indices[a] == 1]
    if adjacent:
        features = [np.stack([d.raw_feature for d in frame_detections[pos]])
                    for pos in frame_positions]
        boxes = [[d.box for d in frame_detections[pos]] for pos in frame_positions]
        pos_of = {pos: local for local, pos in enumerate(frame_positions)}
        pairs = [(pos_of[a], pos_of[b]) for a, b in adjacent]
        assignments = [assignment_matrix(iou_matrix(boxes[i], boxes[j]), config.iou_thres)
                       for i, j in pairs]
        groups.append(ConsistencyGroup(features=features, pairs=pairs, triples=[],
                                       assignments=assignments, use_margin=False))
    return groups


def _sample_contiguous(video_len: int, plan: SamplingPlan,
                       rng: np.random.Generator) -> List[int]:
    """Plain contiguous window, used when long-short sampling is disabled."""
    length = min(plan.frames_per_sequence, video_len)
    start = int(rng.integers(0, video_len - length + 1))
    return list(range(start, start + length))


def train_association_head(scenario: Scenario, plan: SamplingPlan,
                           config: ConsistencyConfig, steps: int,
                           head: Optional[AssociationHead] = None,
                           embed_dim: int = DEFAULT_EMBED_DIM,
                           learning_rate: float = DEFAULT_LEARNING_RATE,
                           include_intra: bool = True,
                           include_inter: bool = True,
                           long_short: bool = True,
                           start_step: int = 0,
                           ) -> Tuple[AssociationHead, List[TrainingRecord]]:
    """Run the self-supervised loop for ``steps`` updates.

    Raises when the scenario cannot produce a single usable multi-frame
    cluster group.
    """
    video = scenario.video
    if len(video) < 3:
        raise ValueError("scenario must have at least 3 frames")
    feature_dim = scenario.config.embedding.feature_dim
    if head is None:
        head = AssociationHead.initialize(embed_dim, feature_dim, seed=plan.seed,
                                          learning_rate=learning_rate)
    k = plan.kmeans_k if plan.kmeans_k is not None else min(8, scenario.config.num_classes)
    segments = split_segments(len(video), plan.segment_length)
    rng = np.random.default_rng(np.random.SeedSequence((plan.seed, start_step)))
    log: List[TrainingRecord] = []
    for step in range(start_step, start_step + steps):
        if long_short:
            indices = sample_training_sequence(segments, plan, rng)
        else:
            indices = _sample_contiguous(len(video), plan, rng)
        frame_dets = [video.frames[i].detections for i in indices]
        kmeans_seed = int(rng.integers(0, 2 ** 31))
        groups = build_training_groups(frame_dets, config, k, kmeans_seed,
                                       frame_indices=indices)
        if not groups:
            raise RuntimeError(
                "degenerate scenario: no category cluster spans two frames "
                f"(sampled frames {indices[:8]}..., {sum(map(len, frame_dets))} detections)")
        breakdown, grad = loss_and_gradient(groups, head, config,
                                            include_intra=include_intra,
                                            include_inter=include_inter)
        head = sgd_step(head, grad)
        log.append(TrainingRecord(step=step, intra=breakdown.intra,
                                  inter=breakdown.inter, total=breakdown.total))
    return head, log


def evaluate_scenario(scenario: Scenario, head: AssociationHead,
                      tracker_config: TrackerConfig = TrackerConfig(),
                      iou_threshold: float = 0.5) -> Dict[str, MetricReport]:
    """Track the scenario with the given head and score it against ground truth."""
    rows = track_sequence(scenario.video, head.embed, scenario.class_bank, tracker_config)
    base = {c for c in range(scenario.class_bank.num_classes)
            if scenario.class_bank.base_mask[c]}
    novel = set(range(scenario.class_bank.num_classes)) - base
    return evaluation_report(rows, scenario.video.ground_truth or {}, base, novel,
                             iou_threshold)


@dataclass(frozen=True)
class AblationVariant:
    """One row of an ablation study; fields override the full setup."""

    name: str
    train: bool = True
    alpha: Optional[float] = None  # None keeps the configured weight
    use_intra: bool = True
    long_short: bool = True
    kmeans_k: Optional[int] = None

    @classmethod
    def from_dict(cls, data: dict) -> "AblationVariant":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown variant keys: {sorted(unknown)}")
        return cls(**data)


DEFAULT_VARIANTS: Tuple[AblationVariant, ...] = (
    AblationVariant(name="full"),
    AblationVariant(name="wo_self_supervised", train=False),
    AblationVariant(name="wo_inter_consistency", alpha=0.0),
    AblationVariant(name="wo_intra_consistency", use_intra=False),
    AblationVariant(name="wo_long_short_sampling", long_short=False),
    AblationVariant(name="wo_category_consistency", kmeans_k=1),
)


@dataclass
class AblationRow:
    name: str
    report: MetricReport
    splits: Dict[str, MetricReport] = field(default_factory=dict)


def run_ablation(scenario: Scenario, variants: Sequence[AblationVariant],
                 plan: SamplingPlan, config: ConsistencyConfig, steps: int,
                 tracker_config: TrackerConfig = TrackerConfig(),
                 embed_dim: int = DEFAULT_EMBED_DIM,
                 learning_rate: float = DEFAULT_LEARNING_RATE) -> List[AblationRow]:
    """Train, track and evaluate each variant from a shared initialization."""
    if len(variants) < 2 or not any(v.name == "full" for v in variants):
        raise ValueError("variants must include 'full' and at least one alternative")
    feature_dim = scenario.config.embedding.feature_dim
    init = AssociationHead.initialize(embed_dim, feature_dim, seed=plan.seed,
                                      learning_rate=learning_rate)
    rows: List[AblationRow] = []
    for variant in variants:
        head = AssociationHead(projection=init.projection.copy(),
                               learning_rate=init.learning_rate)
        if variant.train:
            v_config = config if variant.alpha is None else replace(config,
                                                                    alpha=variant.alpha)
            v_plan = plan if variant.kmeans_k is None else replace(plan,
                                                                   kmeans_k=variant.kmeans_k)
            head, _ = train_association_head(
                scenario, v_plan, v_config, steps, head=head,
                include_intra=variant.use_intra, long_short=variant.long_short)
        splits = evaluate_scenario(scenario, head, tracker_config)
        rows.append(AblationRow(name=variant.name, report=splits["all"], splits=splits))
    return rows
