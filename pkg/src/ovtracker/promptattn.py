"""State-prompt attention weighting and classification-side losses.

A bank of opposite-meaning prompt embedding pairs ("unoccluded"/"occluded",
...) scores how suitable each candidate is for feature learning. The
resulting weight gates the text-branch cross-entropy loss; at test time the
text and image branch probabilities are fused geometrically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import Detection

__all__ = [
    "PromptPairSet",
    "ClassEmbeddingBank",
    "PiecewiseSchedule",
    "FusionWeights",
    "DEFAULT_PROMPT_PAIR_NAMES",
    "class_affinity",
    "attention_weight",
    "piecewise_reweight",
    "weighted_text_loss",
    "image_align_loss",
    "fuse_probabilities",
]

DEFAULT_TEMPERATURE = 0.007

# Adjective pairs describing tracking-favorable vs unfavorable object states;
# synthetic runs substitute constructed state axes under the same names.
DEFAULT_PROMPT_PAIR_NAMES: List[Tuple[str, str]] = [
    ("complete", "incomplete"),
    ("unoccluded", "occluded"),
    ("unobscured", "obscured"),
    ("recognizable", "unrecognizable"),
]

BACKGROUND_LABEL = -1


@dataclass
class PromptPairSet:
    """M pairs of (positive-state, negative-state) unit embeddings."""

    positives: np.ndarray  # [M, D]
    negatives: np.ndarray  # [M, D]
    names: List[Tuple[str, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.positives = np.atleast_2d(np.asarray(self.positives, dtype=np.float64))
        self.negatives = np.atleast_2d(np.asarray(self.negatives, dtype=np.float64))
        if self.positives.shape != self.negatives.shape:
            raise ValueError("positive/negative embedding shapes differ")
        if self.positives.shape[0] < 1:
            raise ValueError("at least one prompt pair is required")
        if not self.names:
            self.names = [(f"pos_{m}", f"neg_{m}") for m in range(len(self))]

    def __len__(self) -> int:
        return self.positives.shape[0]


@dataclass
class ClassEmbeddingBank:
    """Unit class embeddings plus a learned background embedding.

    ``base_mask[c]`` is True when class c was seen during training; novel
    classes only matter at fusion time.
    """

    class_embeddings: np.ndarray  # [num_classes, D]
    background: np.ndarray  # [D]
    temperature: float = DEFAULT_TEMPERATURE
    base_mask: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.class_embeddings = np.atleast_2d(
            np.asarray(self.class_embeddings, dtype=np.float64))
        self.background = np.asarray(self.background, dtype=np.float64)
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        if self.base_mask is None:
            self.base_mask = np.ones(self.num_classes, dtype=bool)
        else:
            self.base_mask = np.asarray(self.base_mask, dtype=bool)
            if self.base_mask.shape != (self.num_classes,):
                raise ValueError("base_mask length must match class count")

    @property
    def num_classes(self) -> int:
        return self.class_embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.class_embeddings.shape[1]

    def base_class_ids(self) -> List[int]:
        return [c for c in range(self.num_classes) if self.base_mask[c]]


@dataclass(frozen=True)
class PiecewiseSchedule:
    """Three-band remapping of the raw attention weight."""

    d_low: float = 0.3
    d_high: float = 0.6

    def __post_init__(self) -> None:
        if not 0.0 <= self.d_low < self.d_high <= 1.0:
            raise ValueError(f"need 0 <= d_low < d_high <= 1, got ({self.d_low}, {self.d_high})")


@dataclass(frozen=True)
class FusionWeights:
    """Image-branch exponents for probability fusion, per class split."""

    base: float = 1.0 / 3.0
    novel: float = 2.0 / 3.0


def class_affinity(text_embedding: np.ndarray, bank: ClassEmbeddingBank) -> np.ndarray:
    """Cosine affinities of a text embedding against [background, class_0, ...].

    Index 0 is the background; class c lands at index c + 1. Inputs are unit
    vectors so the cosine is a plain dot product.
    """
    f = np.asarray(text_embedding, dtype=np.float64)
    if f.shape != (bank.dim,):
        raise ValueError(f"embedding dim {f.shape} does not match bank dim {bank.dim}")
    out = np.empty(bank.num_classes + 1, dtype=np.float64)
    out[0] = float(f @ bank.background)
    out[1:] = bank.class_embeddings @ f
    return out


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def attention_weight(text_embedding: np.ndarray, prompts: PromptPairSet,
                     temperature: float = DEFAULT_TEMPERATURE) -> float:
    """Mean positive-state probability over all prompt pairs, in [0, 1].

    Per pair the two cosines are softmaxed at ``temperature`` and the
    positive entry taken.
    """
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    f = np.asarray(text_embedding, dtype=np.float64)
    cos_pos = prompts.positives @ f
    cos_neg = prompts.negatives @ f
    # softmax over a 2-vector reduces to a sigmoid of the scaled cosine gap
    gaps = (cos_pos - cos_neg) / temperature
    probs = 1.0 / (1.0 + np.exp(-gaps))
    return float(probs.mean())


def piecewise_reweight(w_raw: float, schedule: PiecewiseSchedule = PiecewiseSchedule()) -> float:
    """Zero out low-state weights, pass the middle band, award the top band."""
    if not 0.0 <= w_raw <= 1.0:
        raise ValueError(f"raw weight must be in [0, 1], got {w_raw}")
    if w_raw < schedule.d_low:
        return 0.0
    if w_raw > schedule.d_high:
        return 1.0
    return w_raw


def _label_index(label: int, bank: ClassEmbeddingBank) -> int:
    """Map a class label to its slot in the affinity vector (background first)."""
    if label == BACKGROUND_LABEL:
        return 0
    if not 0 <= label < bank.num_classes:
        raise ValueError(f"label {label} outside the embedding bank")
    if not bank.base_mask[label]:
        raise ValueError(f"label {label} is not a base class")
    return label + 1


def weighted_text_loss(candidates: Sequence[Detection], bank: ClassEmbeddingBank,
                       weights: Sequence[float]) -> float:
    """Attention-weighted mean cross-entropy of the text branch.

    Each candidate's affinity vector is softmaxed at the bank temperature and
    scored against its class label (background allowed). Zero weights drop
    the candidate entirely.
    """
    if len(candidates) != len(weights):
        raise ValueError("one weight per candidate required")
    if not candidates:
        return 0.0
    terms: List[float] = []
    for det, w in zip(candidates, weights):
        if det.class_label is None:
            raise ValueError("candidates must carry a class label")
        target = _label_index(det.class_label, bank)
        if w == 0.0:
            terms.append(0.0)
            continue
        logits = class_affinity(det.text_embedding, bank) / bank.temperature
        shifted = logits - logits.max()
        log_prob = shifted[target] - math.log(float(np.exp(shifted).sum()))
        terms.append(-w * log_prob)
    # fsum keeps the result independent of how a batch was partitioned
    return math.fsum(terms) / len(candidates)


def image_align_loss(candidates: Sequence[Detection], target_embeddings: np.ndarray) -> float:
    """Mean L2 distance between image-branch embeddings and their targets."""
    targets = np.atleast_2d(np.asarray(target_embeddings, dtype=np.float64))
    if targets.shape[0] != len(candidates):
        raise ValueError("one target row per candidate required")
    if not candidates:
        return 0.0
    dists = [float(np.linalg.norm(det.image_embedding - targets[i]))
             for i, det in enumerate(candidates)]
    return math.fsum(dists) / len(candidates)


def fuse_probabilities(p_text: np.ndarray, p_img: np.ndarray, is_base_class: np.ndarray,
                       beta: FusionWeights = FusionWeights()) -> np.ndarray:
    """Geometric fusion of the two branch probability vectors.

    Per class: p ~ p_text^(1-b) * p_img^b with b = ``beta.base`` on base
    classes and ``beta.novel`` on novel ones, renormalized to sum 1.
    """
    pt = np.asarray(p_text, dtype=np.float64)
    pi = np.asarray(p_img, dtype=np.float64)
    mask = np.asarray(is_base_class, dtype=bool)
    if pt.shape != pi.shape or pt.shape != mask.shape:
        raise ValueError("probability vectors and mask must share a shape")
    for name, p in (("p_text", pt), ("p_img", pi)):
        if abs(float(p.sum()) - 1.0) > 1e-6:
            raise ValueError(f"{name} must sum to 1")
    b = np.where(mask, beta.base, beta.novel)
    fused = pt ** (1.0 - b) * pi ** b
    total = float(fused.sum())
    if total <= 0.0:
        raise ValueError("fused probabilities have zero total mass")
    return fused / total
