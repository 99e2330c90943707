"""Accuracy@IoU for grounded findings that lack confidence scores."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..codec import GroundedReport
from ..errors import DomainError
from ..geometry import NormBox, iou

Pair = Tuple[GroundedReport, GroundedReport]  # (ground truth, prediction)


def _iou_or_zero(a: NormBox, b: NormBox) -> float:
    # parsed predictions may be degenerate; they overlap nothing
    if a.area == 0 or b.area == 0:
        return 0.0
    return iou(a, b)


def greedy_match(gt: Sequence[NormBox], pred: Sequence[NormBox]) -> List[Tuple[int, int, float]]:
    """One-to-one matching by descending IoU; ties go to lower indices."""
    candidates = sorted(
        ((_iou_or_zero(g, p), i, j) for i, g in enumerate(gt) for j, p in enumerate(pred)),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    used_gt, used_pred, out = set(), set(), []
    for value, i, j in candidates:
        if i in used_gt or j in used_pred:
            continue
        used_gt.add(i)
        used_pred.add(j)
        out.append((i, j, value))
    return out


def optimal_hits(gt: Sequence[NormBox], pred: Sequence[NormBox], threshold: float) -> int:
    """Largest number of GT boxes that any one-to-one assignment can hit above threshold."""
    if not gt or not pred:
        return 0
    hits = np.array([[_iou_or_zero(g, p) > threshold for p in pred] for g in gt], dtype=float)
    rows, cols = linear_sum_assignment(hits, maximize=True)
    return int(hits[rows, cols].sum())


@dataclass
class StudyMatches:
    """Matched IoUs and the count of eligible GT findings for one study."""

    ious: List[float] = field(default_factory=list)
    eligible: int = 0
    groups: List[Tuple[List[NormBox], List[NormBox]]] = field(default_factory=list)


def match_study(gt: GroundedReport, pred: GroundedReport) -> StudyMatches:
    """Greedy matching per label present in both reports.

    Ground-truth findings whose label the prediction never mentions are not
    eligible: they count neither in the numerator nor in the denominator.
    """
    out = StudyMatches()
    pred_labels = pred.labels
    for label in sorted(gt.labels & pred_labels):
        g = [f.box for f in gt.findings if f.label == label]
        p = [f.box for f in pred.findings if f.label == label]
        out.eligible += len(g)
        out.ious.extend(v for _, _, v in greedy_match(g, p))
        out.groups.append((g, p))
    return out


@dataclass
class LocalizationResult:
    threshold: float
    hits: int
    eligible: int
    optimal_hits: int

    @property
    def accuracy(self) -> float:
        return self.hits / self.eligible if self.eligible else 0.0

    @property
    def empty_denominator(self) -> bool:
        return self.eligible == 0


def _check_threshold(t: float) -> None:
    if not 0 < t < 1:
        raise DomainError(f"IoU threshold must lie in (0, 1), got {t}")


def localization_results(studies: Sequence[StudyMatches], thresholds: Sequence[float]) -> Dict[float, LocalizationResult]:
    if not studies:
        raise DomainError("cannot score an empty set of studies")
    for t in thresholds:
        _check_threshold(t)
    eligible = sum(s.eligible for s in studies)
    out = {}
    for t in thresholds:
        hits = sum(1 for s in studies for v in s.ious if v > t)
        best = sum(optimal_hits(g, p, t) for s in studies for g, p in s.groups)
        out[t] = LocalizationResult(t, hits, eligible, best)
    return out


def accuracy_at_iou(pairs: Sequence[Pair], threshold: float) -> float:
    """Fraction of eligible GT findings whose greedy match has IoU strictly above threshold."""
    if not pairs:
        raise DomainError("cannot score an empty set of pairs")
    _check_threshold(threshold)
    studies = [match_study(gt, pred) for gt, pred in pairs]
    eligible = sum(s.eligible for s in studies)
    if eligible == 0:
        return 0.0
    return sum(1 for s in studies for v in s.ious if v > threshold) / eligible
