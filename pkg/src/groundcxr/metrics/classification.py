"""Multilabel precision/recall/F1 report with micro, macro, weighted and samples averages."""
from __future__ import annotations

from dataclasses import dataclass
from typing import AbstractSet, Dict, List, Sequence, Tuple

from ..errors import DataError, DomainError

AVERAGES = ("micro avg", "macro avg", "weighted avg", "samples avg")


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int

    def as_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall,
                "f1-score": self.f1, "support": self.support}


@dataclass(frozen=True)
class ClassReport:
    labels: Tuple[str, ...]
    per_class: Dict[str, ClassScores]
    averages: Dict[str, ClassScores]

    def rows(self) -> List[Tuple[str, ClassScores]]:
        """Class rows in vocabulary order followed by the four average rows."""
        return [(lab, self.per_class[lab]) for lab in self.labels] + [
            (name, self.averages[name]) for name in AVERAGES
        ]

    def to_dict(self) -> dict:
        return {name: s.as_dict() for name, s in self.rows()}

    def format(self, digits: int = 2) -> str:
        width = max(len(name) for name, _ in self.rows())
        head = f"{'':<{width}}  {'precision':>9}  {'recall':>9}  {'f1-score':>9}  {'support':>9}"
        lines = [head]
        for name, s in self.rows():
            if name == AVERAGES[0]:
                lines.append("")
            lines.append(
                f"{name:<{width}}  {s.precision:>9.{digits}f}  {s.recall:>9.{digits}f}"
                f"  {s.f1:>9.{digits}f}  {s.support:>9d}"
            )
        return "\n".join(lines)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def classification_report(
    y_true: Sequence[AbstractSet[str]],
    y_pred: Sequence[AbstractSet[str]],
    labels: Sequence[str],
) -> ClassReport:
    """Per-class and averaged scores from per-sample label sets.

    A label counts as correct for a sample when it appears in both sets.
    Undefined ratios are 0, except that a sample whose true and predicted sets
    are both empty scores 1 in the samples average (it was predicted exactly).
    Predicted labels outside ``labels`` are ignored.
    """
    if len(y_true) != len(y_pred):
        raise DomainError(f"{len(y_true)} ground-truth samples but {len(y_pred)} predictions")
    labels = tuple(labels)
    vocab = set(labels)
    tp = dict.fromkeys(labels, 0)
    fp = dict.fromkeys(labels, 0)
    fn = dict.fromkeys(labels, 0)
    sample_p, sample_r, sample_f = [], [], []

    for idx, (t, p) in enumerate(zip(y_true, y_pred)):
        unknown = set(t) - vocab
        if unknown:
            raise DataError(f"sample {idx}: unknown ground-truth labels {sorted(unknown)}")
        t, p = set(t), set(p) & vocab
        for lab in t & p:
            tp[lab] += 1
        for lab in p - t:
            fp[lab] += 1
        for lab in t - p:
            fn[lab] += 1
        inter = len(t & p)
        if not t and not p:
            ps = rs = fs = 1.0
        else:
            ps, rs, fs = _ratio(inter, len(p)), _ratio(inter, len(t)), _ratio(2 * inter, len(t) + len(p))
        sample_p.append(ps)
        sample_r.append(rs)
        sample_f.append(fs)

    per_class = {
        lab: ClassScores(
            _ratio(tp[lab], tp[lab] + fp[lab]),
            _ratio(tp[lab], tp[lab] + fn[lab]),
            _ratio(2 * tp[lab], 2 * tp[lab] + fp[lab] + fn[lab]),
            tp[lab] + fn[lab],
        )
        for lab in labels
    }
    total_support = sum(s.support for s in per_class.values())
    s_tp, s_fp, s_fn = sum(tp.values()), sum(fp.values()), sum(fn.values())
    n_classes = len(labels)
    n_samples = len(sample_p)

    def weighted(attr):
        return _ratio(sum(getattr(s, attr) * s.support for s in per_class.values()), total_support)

    averages = {
        "micro avg": ClassScores(
            _ratio(s_tp, s_tp + s_fp), _ratio(s_tp, s_tp + s_fn),
            _ratio(2 * s_tp, 2 * s_tp + s_fp + s_fn), total_support,
        ),
        "macro avg": ClassScores(
            _ratio(sum(s.precision for s in per_class.values()), n_classes),
            _ratio(sum(s.recall for s in per_class.values()), n_classes),
            _ratio(sum(s.f1 for s in per_class.values()), n_classes),
            total_support,
        ),
        "weighted avg": ClassScores(weighted("precision"), weighted("recall"), weighted("f1"), total_support),
        "samples avg": ClassScores(
            _ratio(sum(sample_p), n_samples), _ratio(sum(sample_r), n_samples),
            _ratio(sum(sample_f), n_samples), total_support,
        ),
    }
    return ClassReport(labels, per_class, averages)
