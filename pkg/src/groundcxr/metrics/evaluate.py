"""Join ground truth with model output and run one evaluation task."""
from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from ..codec import (
    DiagnosisSet,
    GroundedReport,
    parse_diagnoses,
    parse_grounded_report,
    serialize_diagnoses,
    serialize_findings,
    strip_localization,
)
from ..errors import DataError, DomainError
from ..geometry import Finding, NormBox
from ..labels import GLOBAL_LABELS, LOCAL_LABELS, canonical_global, canonical_local
from .classification import classification_report
from .localization import localization_results, match_study
from .text import text_scores

TASKS = ("loc", "cls", "text")
DEFAULT_THRESHOLDS = (0.3, 0.4, 0.5)
DEFAULT_STAGE = {"loc": 1, "cls": 2, "text": 2}

NOTES = {
    "loc_matching": "greedy one-to-one by descending IoU within (study, label)",
    "loc_denominator": "ground-truth findings whose label appears in the prediction",
    "loc_hit_rule": "IoU strictly greater than the threshold",
    "text_aggregation": "BLEU corpus-level; ROUGE, METEOR and CIDEr-D mean over pairs",
    "text_preprocessing": "box groups and <p> tags stripped before scoring",
}


@dataclass(frozen=True)
class GroundTruth:
    study_id: str
    report: GroundedReport
    diagnoses: frozenset

    def reference_text(self, stage: int) -> str:
        if stage == 1:
            return serialize_findings(self.report)
        if not self.diagnoses:
            return ""
        return serialize_diagnoses(DiagnosisSet(self.diagnoses))


def _read_jsonl(path: str) -> List[Tuple[int, dict]]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or "id" not in obj:
                raise DataError(f"{path}:{lineno}: record without an 'id' key")
            rows.append((lineno, obj))
    return rows


def _ground_truth_from(obj: dict, where: str) -> GroundTruth:
    try:
        findings = []
        for f in obj.get("findings") or []:
            box = [int(c) for c in f["box"]]
            if len(box) != 4:
                raise ValueError(f"box needs 4 coordinates, got {box}")
            findings.append(Finding(canonical_local(f["label"]), NormBox(*box)))
        diagnoses = frozenset(canonical_global(lab) for lab in obj.get("global") or [])
    except KeyError as exc:
        raise DataError(f"{where}: unknown label or missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise DataError(f"{where}: {exc}") from None
    return GroundTruth(str(obj["id"]), GroundedReport(tuple(findings)), diagnoses)


def load_ground_truth(path: str) -> Dict[str, GroundTruth]:
    out: Dict[str, GroundTruth] = {}
    for lineno, obj in _read_jsonl(path):
        gt = _ground_truth_from(obj, f"{path}:{lineno}")
        if gt.study_id in out:
            raise DataError(f"{path}:{lineno}: duplicate study id {gt.study_id!r}")
        out[gt.study_id] = gt
    return out


def load_predictions(path: str, stage: int) -> Dict[str, str]:
    """Prediction texts by study id.

    Records carry raw model output under ``text``; records in ground-truth
    layout (``findings``/``global``) are serialized for the given stage.
    """
    out: Dict[str, str] = {}
    for lineno, obj in _read_jsonl(path):
        study_id = str(obj["id"])
        if study_id in out:
            raise DataError(f"{path}:{lineno}: duplicate study id {study_id!r}")
        if "text" in obj:
            if not isinstance(obj["text"], str):
                raise DataError(f"{path}:{lineno}: 'text' must be a string")
            out[study_id] = obj["text"]
        else:
            out[study_id] = _ground_truth_from(obj, f"{path}:{lineno}").reference_text(stage)
    return out


def _prepare(args):
    """Parse one prediction; runs in worker processes."""
    task, stage, text = args
    if task == "text":
        return strip_localization(text), []
    if stage == 1:
        report, warnings = parse_grounded_report(text)
        return report, [w.kind for w in warnings]
    diagnoses, warnings = parse_diagnoses(text)
    return diagnoses.labels, [w.kind for w in warnings]


def evaluate_pairs(
    gts: Sequence[GroundTruth],
    texts: Sequence[Optional[str]],
    task: str,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    stage: Optional[int] = None,
    workers: int = 1,
) -> dict:
    """Score aligned ground truths and prediction texts (None = missing prediction)."""
    if task not in TASKS:
        raise DomainError(f"task must be one of {TASKS}, got {task!r}")
    stage = stage or DEFAULT_STAGE[task]
    if stage not in (1, 2):
        raise DomainError(f"stage must be 1 or 2, got {stage!r}")
    if not gts:
        raise DomainError("no ground-truth studies to evaluate")
    thresholds = sorted(thresholds)

    warnings: Counter = Counter()
    jobs = [(task, stage, t if t is not None else "") for t in texts]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            prepared = list(pool.map(_prepare, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        prepared = [_prepare(j) for j in jobs]
    for text, (_, kinds) in zip(texts, prepared):
        if text is None:
            warnings["missing-prediction"] += 1
        else:
            warnings.update(kinds)

    report = {"task": task, "stage": stage, "n_studies": len(gts), "metrics": {},
              "per_class": {}, "warnings": {}, "flags": [], "notes": NOTES}

    if task == "loc":
        studies = [match_study(gt.report, pred) for gt, (pred, _) in zip(gts, prepared)]
        results = localization_results(studies, thresholds)
        for t, res in results.items():
            report["metrics"][f"accuracy@{t:g}"] = res.accuracy
            report["per_class"][f"accuracy@{t:g}"] = {
                "hits": res.hits, "eligible": res.eligible, "optimal_hits": res.optimal_hits,
            }
        if any(res.empty_denominator for res in results.values()):
            report["flags"].append("empty-denominator: no ground-truth label was predicted; accuracy set to 0")
    elif task == "cls":
        labels = LOCAL_LABELS if stage == 1 else GLOBAL_LABELS
        y_true = [gt.report.labels if stage == 1 else gt.diagnoses for gt in gts]
        y_pred = [pred.labels if stage == 1 else pred for pred, _ in prepared]
        cls = classification_report(y_true, y_pred, labels)
        report["metrics"] = {name: s.as_dict() for name, s in cls.averages.items()}
        report["per_class"] = {lab: cls.per_class[lab].as_dict() for lab in labels}
    else:
        pairs = [(cand, strip_localization(gt.reference_text(stage))) for gt, (cand, _) in zip(gts, prepared)]
        report["metrics"] = text_scores(pairs)
        if len(pairs) < 2:
            warnings["degenerate-idf"] += 1

    report["warnings"] = dict(sorted(warnings.items()))
    return report


def evaluate_run(
    gt_file: str,
    pred_file: str,
    task: str,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    stage: Optional[int] = None,
    workers: int = 1,
) -> dict:
    """Evaluate a prediction JSONL against a ground-truth JSONL.

    Studies are joined on ``id``; a study without a prediction is scored as an
    empty response. Prediction ids unknown to the ground truth are counted
    under the ``unknown-id`` warning and otherwise ignored.
    """
    if task not in TASKS:
        raise DomainError(f"task must be one of {TASKS}, got {task!r}")
    stage = stage or DEFAULT_STAGE[task]
    gts = load_ground_truth(gt_file)
    preds = load_predictions(pred_file, stage)
    ordered = [gts[k] for k in sorted(gts)]
    report = evaluate_pairs(ordered, [preds.get(gt.study_id) for gt in ordered], task, thresholds, stage, workers)
    unknown = len(set(preds) - set(gts))
    if unknown:
        report["warnings"]["unknown-id"] = unknown
        report["warnings"] = dict(sorted(report["warnings"].items()))
    missing = report["warnings"].get("missing-prediction", 0)
    if missing:
        report["flags"].append(f"{missing} studies had no prediction and were scored as empty responses")
    return report
