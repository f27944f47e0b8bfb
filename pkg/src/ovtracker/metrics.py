"""Tracking evaluation: localization, classification and association accuracy.

Predictions and ground truth are aligned per frame by an optimal one-to-one
class-agnostic matching (most matches first, largest total IoU as the tie
break). The three component scores and their mean are computed from the
resulting ledger; classification and association accounting is restricted to
the correctly localized matches.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import GroundTruthBox, iou_matrix
from .tracker import TrackRow

__all__ = [
    "TplMatch",
    "MatchLedger",
    "MetricReport",
    "match_localization",
    "loc_a",
    "cls_a",
    "assoc_a",
    "teta",
    "evaluate_tracking",
    "evaluation_report",
]

_COUNT_BONUS = 1000.0  # dominates any per-frame IoU sum, so match count wins first


@dataclass(frozen=True)
class TplMatch:
    """One correctly localized (prediction, ground truth) pair."""

    frame: int
    pred_track: int
    gt_track: int
    pred_class: int
    gt_class: int
    iou: float


@dataclass
class MatchLedger:
    """Localization alignment tallies for a whole sequence."""

    tpl: List[TplMatch] = field(default_factory=list)
    fpl: int = 0
    fnl: int = 0

    @property
    def tpc(self) -> int:
        return sum(1 for m in self.tpl if m.pred_class == m.gt_class)

    @property
    def fpc(self) -> int:
        return sum(1 for m in self.tpl if m.pred_class != m.gt_class)

    @property
    def fnc(self) -> int:
        # on one-to-one matches every class miss is simultaneously a wrong
        # prediction and an unpredicted ground-truth class
        return self.fpc

    def merge(self, other: "MatchLedger") -> "MatchLedger":
        return MatchLedger(tpl=self.tpl + other.tpl, fpl=self.fpl + other.fpl,
                           fnl=self.fnl + other.fnl)


@dataclass(frozen=True)
class MetricReport:
    loc_a: float
    cls_a: float
    assoc_a: float
    teta: float
    tpl: int
    fpl: int
    fnl: int
    tpc: int
    fpc: int
    fnc: int

    def as_dict(self) -> Dict[str, float]:
        return {"teta": self.teta, "loca": self.loc_a, "assoca": self.assoc_a,
                "clsa": self.cls_a}


def _group_rows(rows: Iterable[TrackRow]) -> Dict[int, List[TrackRow]]:
    frames: Dict[int, List[TrackRow]] = {}
    for row in rows:
        frames.setdefault(row.frame, []).append(row)
    return frames


def match_localization(predictions: Sequence[TrackRow],
                       ground_truth: Dict[int, List[GroundTruthBox]],
                       iou_threshold: float = 0.5) -> MatchLedger:
    """Optimal per-frame one-to-one matching at the IoU gate.

    Matches maximize the number of matched pairs first and the total IoU
    second; unmatched predictions count as FPL, unmatched ground truth as
    FNL.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must be in (0, 1]")
    pred_frames = _group_rows(predictions)
    ledger = MatchLedger()
    for frame in sorted(set(pred_frames) | set(ground_truth)):
        preds = pred_frames.get(frame, [])
        gts = ground_truth.get(frame, [])
        if not preds or not gts:
            ledger.fpl += len(preds)
            ledger.fnl += len(gts)
            continue
        ious = iou_matrix([p.box for p in preds], [g.box for g in gts])
        feasible = ious >= iou_threshold
        weights = np.where(feasible, _COUNT_BONUS + ious, 0.0)
        rows, cols = linear_sum_assignment(weights, maximize=True)
        matched_p: Set[int] = set()
        matched_g: Set[int] = set()
        for i, j in zip(rows, cols):
            if not feasible[i, j]:
                continue
            ledger.tpl.append(TplMatch(frame=frame, pred_track=preds[i].track_id,
                                       gt_track=gts[j].track_id,
                                       pred_class=preds[i].class_id,
                                       gt_class=gts[j].class_id,
                                       iou=float(ious[i, j])))
            matched_p.add(int(i))
            matched_g.add(int(j))
        ledger.fpl += len(preds) - len(matched_p)
        ledger.fnl += len(gts) - len(matched_g)
    return ledger


def loc_a(ledger: MatchLedger) -> float:
    """Fraction of the localization universe that was correctly matched."""
    denom = len(ledger.tpl) + ledger.fpl + ledger.fnl
    return len(ledger.tpl) / denom if denom else 0.0


def cls_a(ledger: MatchLedger) -> float:
    """Classification accuracy over the correctly localized matches."""
    denom = ledger.tpc + ledger.fpc + ledger.fnc
    return ledger.tpc / denom if denom else 0.0


def assoc_a(ledger: MatchLedger) -> float:
    """Mean per-match Jaccard between predicted-identity and true-identity sets."""
    if not ledger.tpl:
        return 0.0
    count_both = Counter((m.pred_track, m.gt_track) for m in ledger.tpl)
    count_pred = Counter(m.pred_track for m in ledger.tpl)
    count_gt = Counter(m.gt_track for m in ledger.tpl)
    total = 0.0
    for m in ledger.tpl:
        tpa = count_both[(m.pred_track, m.gt_track)]
        fpa = count_pred[m.pred_track] - tpa
        fna = count_gt[m.gt_track] - tpa
        total += tpa / (tpa + fpa + fna)
    return total / len(ledger.tpl)


def teta(loc: float, cls: float, assoc: float) -> float:
    """Mean of the three component accuracies."""
    return (loc + cls + assoc) / 3.0


def _report_from_ledger(ledger: MatchLedger) -> MetricReport:
    l, c, a = loc_a(ledger), cls_a(ledger), assoc_a(ledger)
    return MetricReport(loc_a=l, cls_a=c, assoc_a=a, teta=teta(l, c, a),
                        tpl=len(ledger.tpl), fpl=ledger.fpl, fnl=ledger.fnl,
                        tpc=ledger.tpc, fpc=ledger.fpc, fnc=ledger.fnc)


def evaluate_tracking(predictions: Sequence[TrackRow],
                      ground_truth: Dict[int, List[GroundTruthBox]],
                      iou_threshold: float = 0.5,
                      class_filter: Optional[Set[int]] = None) -> MetricReport:
    """Evaluate one sequence, optionally restricted to a set of classes.

    With a filter, predictions whose voted class is outside the set and
    ground-truth boxes of outside classes are both removed before matching.
    """
    preds = list(predictions)
    gt = ground_truth
    if class_filter is not None:
        preds = [p for p in preds if p.class_id in class_filter]
        gt = {f: [g for g in boxes if g.class_id in class_filter]
              for f, boxes in ground_truth.items()}
        gt = {f: boxes for f, boxes in gt.items() if boxes}
    ledger = match_localization(preds, gt, iou_threshold)
    return _report_from_ledger(ledger)


def evaluation_report(predictions: Sequence[TrackRow],
                      ground_truth: Dict[int, List[GroundTruthBox]],
                      base_classes: Iterable[int], novel_classes: Iterable[int],
                      iou_threshold: float = 0.5) -> Dict[str, MetricReport]:
    """Metrics for the base split, the novel split and everything together."""
    base, novel = set(base_classes), set(novel_classes)
    return {
        "base": evaluate_tracking(predictions, ground_truth, iou_threshold, base),
        "novel": evaluate_tracking(predictions, ground_truth, iou_threshold, novel),
        "all": evaluate_tracking(predictions, ground_truth, iou_threshold, None),
    }
