"""Self-supervised consistency losses for the association head.

Per-frame feature matrices (one L2-normalized row per object) are compared
through temperature-scaled row softmaxes. Round trips between frames
(forward map times backward map) should land on the identity, which a margin
loss enforces; a BCE term additionally ties appearance similarity to spatial
box overlap. Gradients with respect to the head's projection are derived by
hand so no autodiff framework is needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "AssociationHead",
    "ConsistencyConfig",
    "ConsistencyGroup",
    "LossBreakdown",
    "normalize_rows",
    "similarity_matrix",
    "row_softmax",
    "pair_consistency",
    "triplet_similarity",
    "trip_consistency",
    "margin_loss",
    "intra_loss",
    "assignment_matrix",
    "inter_loss",
    "total_loss",
    "batch_loss",
    "loss_gradient",
    "loss_and_gradient",
    "sgd_step",
]

BCE_EPS = 1e-7
_TAU_REFERENCE_DIM = 64


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """Return a copy of x with unit L2 rows (zero rows are left untouched)."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


@dataclass
class AssociationHead:
    """Linear projection followed by row normalization."""

    projection: np.ndarray  # [embed_dim, feature_dim]
    learning_rate: float = 0.5

    def __post_init__(self) -> None:
        self.projection = np.asarray(self.projection, dtype=np.float64)
        if self.projection.ndim != 2:
            raise ValueError("projection must be a matrix")
        if not np.all(np.isfinite(self.projection)):
            raise ValueError("projection must be finite")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")

    @property
    def embed_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.projection.shape[1]

    def embed(self, raw_features: np.ndarray) -> np.ndarray:
        """Project raw features and L2-normalize each row."""
        raw = np.atleast_2d(np.asarray(raw_features, dtype=np.float64))
        if raw.shape[1] != self.feature_dim:
            raise ValueError(
                f"feature dim {raw.shape[1]} does not match projection {self.projection.shape}")
        return normalize_rows(raw @ self.projection.T)

    @classmethod
    def initialize(cls, embed_dim: int, feature_dim: int, seed: int = 0,
                   learning_rate: float = 0.5) -> "AssociationHead":
        rng = np.random.default_rng(seed)
        proj = rng.normal(0.0, 1.0 / math.sqrt(feature_dim), size=(embed_dim, feature_dim))
        return cls(projection=proj, learning_rate=learning_rate)


@dataclass(frozen=True)
class ConsistencyConfig:
    """Hyperparameters of the consistency objective."""

    tau: float = 10.0
    margin: float = 0.5
    alpha: float = 0.9
    iou_thres: float = 0.9
    # rescales tau with sqrt(embed_dim / 64) so logits keep a stable scale
    # across embedding widths
    adaptive_tau: bool = True

    def __post_init__(self) -> None:
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if self.margin < 0.0:
            raise ValueError("margin must be >= 0")
        if self.alpha < 0.0:
            raise ValueError("alpha must be >= 0")
        if not 0.0 < self.iou_thres <= 1.0:
            raise ValueError("iou_thres must be in (0, 1]")

    def effective_tau(self, embed_dim: int) -> float:
        if self.adaptive_tau:
            return self.tau * math.sqrt(embed_dim / _TAU_REFERENCE_DIM)
        return self.tau


@dataclass
class ConsistencyGroup:
    """Training material for one group of frames.

    ``features[f]`` holds raw features of the group's objects in the f-th
    usable frame; ``assignments[p]`` is the box-overlap target matrix for
    ``pairs[p]`` (None disables the BCE term for that pair). Category-cluster
    groups drive the margin losses; whole-frame groups carry the BCE targets
    with ``use_margin`` off. Pair and triple indices refer to positions in
    ``features``.
    """

    features: List[np.ndarray]
    pairs: List[Tuple[int, int]] = field(default_factory=list)
    triples: List[Tuple[int, int, int]] = field(default_factory=list)
    assignments: List[Optional[np.ndarray]] = field(default_factory=list)
    use_margin: bool = True

    def __post_init__(self) -> None:
        if self.assignments and len(self.assignments) != len(self.pairs):
            raise ValueError("one assignment target per pair required")
        if not self.assignments:
            self.assignments = [None] * len(self.pairs)


@dataclass(frozen=True)
class LossBreakdown:
    intra: float
    inter: float
    total: float


def similarity_matrix(features_i: np.ndarray, features_j: np.ndarray) -> np.ndarray:
    """Dot products between all rows of two feature matrices."""
    fi = np.atleast_2d(np.asarray(features_i, dtype=np.float64))
    fj = np.atleast_2d(np.asarray(features_j, dtype=np.float64))
    if fi.shape[1] != fj.shape[1]:
        raise ValueError(f"feature dims differ: {fi.shape[1]} vs {fj.shape[1]}")
    return fi @ fj.T


def row_softmax(m: np.ndarray, tau: float) -> np.ndarray:
    """Softmax of tau * m along each row."""
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        return np.zeros_like(m)
    z = tau * m
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def pair_consistency(features_i: np.ndarray, features_j: np.ndarray, tau: float) -> np.ndarray:
    """Forward-then-backward soft assignment between two frames.

    The product of the two row-stochastic maps is itself row-stochastic and
    approaches the identity when the frames contain the same objects.
    Either frame being empty yields an empty matrix.
    """
    m = similarity_matrix(features_i, features_j)
    if m.size == 0:
        return np.zeros((0, 0), dtype=np.float64)
    s_ij = row_softmax(m, tau)
    s_ji = row_softmax(m.T, tau)
    return s_ij @ s_ji


def triplet_similarity(m_ij: np.ndarray, m_jk: np.ndarray) -> np.ndarray:
    """Similarity between frames i and k routed through frame j."""
    m_ij = np.asarray(m_ij, dtype=np.float64)
    m_jk = np.asarray(m_jk, dtype=np.float64)
    if m_ij.shape[1] != m_jk.shape[0]:
        raise ValueError(f"inner dimensions disagree: {m_ij.shape} x {m_jk.shape}")
    return m_ij @ m_jk


def trip_consistency(features_i: np.ndarray, features_j: np.ndarray,
                     features_k: np.ndarray, tau: float) -> np.ndarray:
    """Three-frame cyclic round trip i -> j -> k -> j -> i."""
    m_ik = triplet_similarity(similarity_matrix(features_i, features_j),
                              similarity_matrix(features_j, features_k))
    if m_ik.size == 0:
        return np.zeros((0, 0), dtype=np.float64)
    s_ik = row_softmax(m_ik, tau)
    s_ki = row_softmax(m_ik.T, tau)
    return s_ik @ s_ki


def _margin_terms(e: np.ndarray, m: float) -> Tuple[float, List[Tuple[int, int]]]:
    """Loss plus the (row, off-diagonal argmax column) of each active row."""
    n = e.shape[0]
    if n < 2:
        return 0.0, []
    masked = e.copy()
    np.fill_diagonal(masked, -np.inf)
    c_star = np.argmax(masked, axis=1)  # first max, so ties pick the lowest column
    rows = np.arange(n)
    terms = masked[rows, c_star] - e[rows, rows] + m
    active = terms > 0.0
    loss = float(terms[active].sum())
    return loss, [(int(r), int(c_star[r])) for r in rows[active]]


def margin_loss(e: np.ndarray, m: float) -> float:
    """Hinge on each row: the diagonal must beat the best off-diagonal by m."""
    e = np.atleast_2d(np.asarray(e, dtype=np.float64))
    if e.size and e.shape[0] != e.shape[1]:
        raise ValueError("margin_loss expects a square matrix")
    if m < 0.0:
        raise ValueError("margin must be >= 0")
    loss, _ = _margin_terms(e, m)
    return loss


def intra_loss(frame_triple: Tuple[np.ndarray, np.ndarray, np.ndarray],
               config: ConsistencyConfig) -> float:
    """Margin loss of the pair round trip plus the triple round trip.

    Frames must come from one category cluster; empty frames contribute
    nothing.
    """
    mats: List[Optional[np.ndarray]] = []
    for f in frame_triple:
        f = np.asarray(f, dtype=np.float64)
        mats.append(None if f.size == 0 else np.atleast_2d(f))
    fi, fj, fk = mats
    if fi is None or fj is None:
        return 0.0
    tau = config.effective_tau(fi.shape[1])
    loss = margin_loss(pair_consistency(fi, fj, tau), config.margin)
    if fk is not None:
        loss += margin_loss(trip_consistency(fi, fj, fk, tau), config.margin)
    return loss


def assignment_matrix(iou_m: np.ndarray, iou_thres: float) -> np.ndarray:
    """Binary spatial-continuity targets: 1 where overlap strictly exceeds the threshold."""
    iou_m = np.asarray(iou_m, dtype=np.float64)
    return (iou_m > iou_thres).astype(np.float64)


def inter_loss(s: np.ndarray, a: np.ndarray) -> float:
    """Mean binary cross-entropy between similarity and spatial targets."""
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if s.shape != a.shape:
        raise ValueError(f"shape mismatch: {s.shape} vs {a.shape}")
    if s.size == 0:
        return 0.0
    sc = np.clip(s, BCE_EPS, 1.0 - BCE_EPS)
    return float(np.mean(-(a * np.log(sc) + (1.0 - a) * np.log(1.0 - sc))))


def total_loss(intra: float, inter: float, alpha: float) -> float:
    return intra + alpha * inter


def _softmax_backward(s: np.ndarray, ds: np.ndarray, tau: float) -> np.ndarray:
    """Gradient through row_softmax: d(loss)/d(m) given d(loss)/d(s)."""
    inner = (ds * s).sum(axis=1, keepdims=True)
    return tau * s * (ds - inner)


def _bce_backward(s: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Gradient of the mean BCE; the clamped region is flat."""
    inside = (s > BCE_EPS) & (s < 1.0 - BCE_EPS)
    sc = np.clip(s, BCE_EPS, 1.0 - BCE_EPS)
    grad = (sc - a) / (sc * (1.0 - sc))
    return np.where(inside, grad, 0.0) / s.size


def _margin_backward(e_shape: Tuple[int, int], active: List[Tuple[int, int]],
                     scale: float) -> np.ndarray:
    de = np.zeros(e_shape, dtype=np.float64)
    for r, c in active:
        de[r, c] += scale
        de[r, r] -= scale
    return de


def _forward_backward(groups: Sequence[ConsistencyGroup], projection: np.ndarray,
                      config: ConsistencyConfig, want_grad: bool,
                      include_intra: bool, include_inter: bool):
    """Single pass computing the batch objective and, optionally, dL/dW."""
    w = projection
    tau = config.effective_tau(w.shape[0])

    # embed every group's frames once
    embedded: List[List[np.ndarray]] = []
    raws: List[List[np.ndarray]] = []
    norms: List[List[np.ndarray]] = []
    for g in groups:
        fr, fe, fn = [], [], []
        for x in g.features:
            x = np.asarray(x, dtype=np.float64)
            x = x.reshape(0, w.shape[1]) if x.size == 0 else np.atleast_2d(x)
            z = x @ w.T
            u = np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-12)
            fr.append(x)
            fe.append(z / u)
            fn.append(u)
        raws.append(fr)
        embedded.append(fe)
        norms.append(fn)

    pair_losses: List[float] = []
    trip_losses: List[float] = []
    bce_losses: List[float] = []
    pair_cache = []
    trip_cache = []

    for gi, g in enumerate(groups):
        feats = embedded[gi]
        for pi, (i, j) in enumerate(g.pairs):
            fi, fj = feats[i], feats[j]
            if fi.shape[0] == 0 or fj.shape[0] == 0:
                continue
            m = fi @ fj.T
            s_ij = row_softmax(m, tau)
            s_ji = row_softmax(m.T, tau)
            e = s_ij @ s_ji
            a = g.assignments[pi]
            active = []
            if g.use_margin:
                ml, active = _margin_terms(e, config.margin)
                pair_losses.append(ml)
            if a is not None:
                bce_losses.append(inter_loss(s_ij, a))
            pair_cache.append((gi, i, j, s_ij, s_ji, active, a))
        for (i, j, k) in g.triples:
            fi, fj, fk = feats[i], feats[j], feats[k]
            if fi.shape[0] == 0 or fj.shape[0] == 0 or fk.shape[0] == 0:
                continue
            if not g.use_margin:
                continue
            m_ij = fi @ fj.T
            m_jk = fj @ fk.T
            m_ik = m_ij @ m_jk
            s_ik = row_softmax(m_ik, tau)
            s_ki = row_softmax(m_ik.T, tau)
            e = s_ik @ s_ki
            ml, active = _margin_terms(e, config.margin)
            trip_losses.append(ml)
            trip_cache.append((gi, i, j, k, m_ij, m_jk, s_ik, s_ki, active))

    n_pairs = len(pair_losses)
    n_trips = len(trip_losses)
    n_bce = len(bce_losses)
    intra = 0.0
    if n_pairs:
        intra += math.fsum(pair_losses) / n_pairs
    if n_trips:
        intra += math.fsum(trip_losses) / n_trips
    inter = math.fsum(bce_losses) / n_bce if n_bce else 0.0
    total = (intra if include_intra else 0.0) + (config.alpha * inter if include_inter else 0.0)
    breakdown = LossBreakdown(intra=intra, inter=inter, total=total)
    if not want_grad:
        return breakdown, None

    d_feats = [[np.zeros_like(f) for f in embedded[gi]] for gi in range(len(groups))]

    pair_scale = 1.0 / n_pairs if (include_intra and n_pairs) else 0.0
    trip_scale = 1.0 / n_trips if (include_intra and n_trips) else 0.0
    bce_scale = config.alpha / n_bce if (include_inter and n_bce) else 0.0

    for (gi, i, j, s_ij, s_ji, active, a) in pair_cache:
        fi, fj = embedded[gi][i], embedded[gi][j]
        ds_ij = np.zeros_like(s_ij)
        ds_ji = np.zeros_like(s_ji)
        if pair_scale and active:
            de = _margin_backward((s_ij.shape[0], s_ij.shape[0]), active, pair_scale)
            ds_ij += de @ s_ji.T
            ds_ji += s_ij.T @ de
        if bce_scale and a is not None:
            ds_ij += bce_scale * _bce_backward(s_ij, a)
        dm = _softmax_backward(s_ij, ds_ij, tau)
        dm += _softmax_backward(s_ji, ds_ji, tau).T
        d_feats[gi][i] += dm @ fj
        d_feats[gi][j] += dm.T @ fi

    if trip_scale:
        for (gi, i, j, k, m_ij, m_jk, s_ik, s_ki, active) in trip_cache:
            if not active:
                continue
            fi, fj, fk = embedded[gi][i], embedded[gi][j], embedded[gi][k]
            de = _margin_backward((s_ik.shape[0], s_ik.shape[0]), active, trip_scale)
            ds_ik = de @ s_ki.T
            ds_ki = s_ik.T @ de
            dm_ik = _softmax_backward(s_ik, ds_ik, tau)
            dm_ik += _softmax_backward(s_ki, ds_ki, tau).T
            dm_ij = dm_ik @ m_jk.T
            dm_jk = m_ij.T @ dm_ik
            d_feats[gi][i] += dm_ij @ fj
            d_feats[gi][j] += dm_ij.T @ fi
            d_feats[gi][j] += dm_jk @ fk
            d_feats[gi][k] += dm_jk.T @ fj

    grad = np.zeros_like(w)
    for gi in range(len(groups)):
        for fidx, df in enumerate(d_feats[gi]):
            if df.size == 0 or not df.any():
                continue
            f = embedded[gi][fidx]
            u = norms[gi][fidx]
            dz = (df - f * (df * f).sum(axis=1, keepdims=True)) / u
            grad += dz.T @ raws[gi][fidx]
    return breakdown, grad


def batch_loss(groups: Sequence[ConsistencyGroup], head: AssociationHead,
               config: ConsistencyConfig, include_intra: bool = True,
               include_inter: bool = True) -> LossBreakdown:
    """Mean consistency objective over every usable pair and triple in the batch."""
    breakdown, _ = _forward_backward(groups, head.projection, config,
                                     want_grad=False, include_intra=include_intra,
                                     include_inter=include_inter)
    return breakdown


def loss_and_gradient(groups: Sequence[ConsistencyGroup], head: AssociationHead,
                      config: ConsistencyConfig, include_intra: bool = True,
                      include_inter: bool = True) -> Tuple[LossBreakdown, np.ndarray]:
    return _forward_backward(groups, head.projection, config, want_grad=True,
                             include_intra=include_intra, include_inter=include_inter)


def loss_gradient(groups: Sequence[ConsistencyGroup], head: AssociationHead,
                  config: ConsistencyConfig, include_intra: bool = True,
                  include_inter: bool = True) -> np.ndarray:
    """Analytic gradient of the batch objective wrt the head projection.

    Flows through row normalization, the similarity products, the row
    softmaxes, the margin hinge (zero subgradient exactly at the kink) and
    the clamped BCE.
    """
    _, grad = loss_and_gradient(groups, head, config, include_intra, include_inter)
    return grad


def sgd_step(head: AssociationHead, gradient: np.ndarray) -> AssociationHead:
    """One plain gradient-descent update; returns a new head."""
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != head.projection.shape:
        raise ValueError(
            f"gradient shape {gradient.shape} does not match projection {head.projection.shape}")
    return replace(head, projection=head.projection - head.learning_rate * gradient)
