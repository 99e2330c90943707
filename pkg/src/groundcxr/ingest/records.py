"""Multi-annotator study records and the two training-stage exports."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from ..codec import (
    DiagnosisSet,
    GroundedReport,
    PromptTemplate,
    build_prompt,
    serialize_diagnoses,
    serialize_findings,
)
from ..errors import DataError, DomainError
from ..geometry import Finding, ImageDims, PixelBox, dedup_findings, normalize_box
from ..labels import NO_FINDING, match_global_label, match_local_label

log = logging.getLogger(__name__)

Coords = Tuple[float, float, float, float]


@dataclass(frozen=True)
class PixelFinding:
    label: str
    box: Coords


@dataclass(frozen=True)
class AnnotatorLabels:
    annotator: str
    findings: Tuple[PixelFinding, ...] = ()
    global_labels: frozenset = field(default_factory=frozenset)

    @property
    def no_finding(self) -> bool:
        if NO_FINDING in self.global_labels:
            return True
        return not self.findings and not self.global_labels

    @property
    def has_positive(self) -> bool:
        return bool(self.findings) or bool(self.global_labels - {NO_FINDING})


@dataclass(frozen=True)
class StudyRecord:
    study_id: str
    image: str
    dims: ImageDims
    annotations: Tuple[AnnotatorLabels, ...]

    def __post_init__(self):
        object.__setattr__(self, "annotations", tuple(self.annotations))
        if not self.annotations:
            raise DomainError(f"study {self.study_id!r} has no annotators")

    def out_of_bounds(self) -> List[PixelFinding]:
        w, h = self.dims.width, self.dims.height
        return [
            f for a in self.annotations for f in a.findings
            if not (0 <= f.box[0] and 0 <= f.box[1] and f.box[2] <= w and f.box[3] <= h)
        ]

    def to_json(self) -> dict:
        return {
            "study_id": self.study_id,
            "image": self.image,
            "width": self.dims.width,
            "height": self.dims.height,
            "annotations": [
                {
                    "annotator": a.annotator,
                    "findings": [{"label": f.label, "box": list(f.box)} for f in a.findings],
                    "global": sorted(a.global_labels),
                }
                for a in self.annotations
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StudyRecord":
        try:
            annotations = tuple(
                AnnotatorLabels(
                    str(a["annotator"]),
                    tuple(PixelFinding(f["label"], tuple(float(c) for c in f["box"])) for f in a.get("findings", [])),
                    frozenset(a.get("global", [])),
                )
                for a in obj["annotations"]
            )
            return cls(str(obj["study_id"]), obj["image"], ImageDims(int(obj["width"]), int(obj["height"])), annotations)
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed study record: {exc}") from None


@dataclass(frozen=True)
class StageRecord:
    study_id: str
    image: str
    stage: int
    prompt: str
    target: str

    def to_json(self) -> dict:
        return {"id": self.study_id, "image": self.image, "stage": self.stage,
                "prompt": self.prompt, "target": self.target}


# ------------------------------------------------------------------ annotations

_COORD_KEYS = ("x_min", "y_min", "x_max", "y_max")


def _annotator_of(row: dict) -> str:
    for key in ("annotator_id", "rad_id", "rad_ID"):
        if row.get(key) not in (None, ""):
            return str(row[key])
    return "unknown"


def _rows(path: str) -> Iterable[Tuple[int, dict]]:
    if path.endswith(".csv"):
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.DictReader(fh), start=2):
                yield lineno, row
    else:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    yield lineno, json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def load_annotations(path: str) -> Dict[str, Tuple[AnnotatorLabels, ...]]:
    """Read VinDr-style annotation rows (CSV or JSONL) grouped by image and annotator.

    Rows whose ``class_name`` is a local label need the four coordinates; rows
    naming a global label (including "No finding") carry empty coordinates.
    """
    grouped: Dict[str, Dict[str, Tuple[list, set]]] = {}
    for lineno, row in _rows(path):
        try:
            image_id = str(row["image_id"])
            name = str(row["class_name"])
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: missing column {exc.args[0]!r}") from None
        annotator = _annotator_of(row)
        findings, globals_ = grouped.setdefault(image_id, {}).setdefault(annotator, ([], set()))

        local, _ = match_local_label(name, fuzzy=False)
        if local is not None:
            try:
                coords = tuple(float(row[k]) for k in _COORD_KEYS)
            except (KeyError, TypeError, ValueError):
                raise DataError(f"{path}:{lineno}: local label {name!r} without a complete box") from None
            findings.append(PixelFinding(local, coords))
            continue
        glob, _ = match_global_label(name, fuzzy=False)
        if glob is None:
            raise DataError(f"{path}:{lineno}: unknown class name {name!r}")
        globals_.add(glob)

    return {
        image_id: tuple(
            AnnotatorLabels(a, tuple(fs), frozenset(gs)) for a, (fs, gs) in sorted(by_annotator.items())
        )
        for image_id, by_annotator in grouped.items()
    }


# -------------------------------------------------------------------- filtering


def is_conflicting(record: StudyRecord) -> bool:
    """One reader called the image normal while another reported a finding or disease."""
    return any(a.no_finding for a in record.annotations) and any(
        a.has_positive for a in record.annotations
    )


def filter_conflicts(records: Sequence[StudyRecord]) -> Tuple[List[StudyRecord], List[StudyRecord]]:
    kept, removed = [], []
    for r in records:
        (removed if is_conflicting(r) else kept).append(r)
    return kept, removed


# ---------------------------------------------------------------------- export


def merged_report(record: StudyRecord, clamp: bool = False, threshold: float = 0.5) -> GroundedReport:
    """Union of every annotator's boxes on the 0..100 grid, overlap-deduplicated."""
    findings = []
    for a in record.annotations:
        for f in a.findings:
            norm = normalize_box(PixelBox(*f.box), record.dims, clamp=clamp)
            findings.append(Finding(f.label, norm))
    return GroundedReport(tuple(dedup_findings(findings, threshold)))


def merged_diagnoses(record: StudyRecord) -> Optional[DiagnosisSet]:
    labels = set()
    for a in record.annotations:
        labels |= a.global_labels
    if not labels:
        if all(a.no_finding for a in record.annotations):
            return DiagnosisSet(frozenset({NO_FINDING}))
        return None
    return DiagnosisSet(frozenset(labels))


@dataclass
class ExportResult:
    records: List[StageRecord]
    ground_truth: List[dict]
    skipped: List[Tuple[str, str]]


def _export_one(record: StudyRecord, stage: int, prompt: str, clamp: bool):
    """Returns (StageRecord, ground-truth dict) or (None, reason)."""
    try:
        report = merged_report(record, clamp=clamp)
    except DomainError as exc:
        return None, f"invalid box: {exc}"
    try:
        diagnoses = merged_diagnoses(record)
    except DomainError as exc:
        diagnoses = None
        if stage == 2:
            return None, f"inconsistent global labels: {exc}"

    if stage == 1:
        if report.no_finding and not all(a.no_finding for a in record.annotations):
            return None, "no localized findings"
        target = serialize_findings(report)
    else:
        if diagnoses is None:
            return None, "no global labels"
        target = serialize_diagnoses(diagnoses)

    gt = {
        "id": record.study_id,
        "findings": [{"label": f.label, "box": f.box.as_list()} for f in report.findings],
        "global": diagnoses.ordered() if diagnoses is not None else [],
    }
    return StageRecord(record.study_id, record.image, stage, prompt, target), gt


def export_stage_records(
    records: Iterable[StudyRecord],
    stage: int,
    template: Optional[PromptTemplate] = None,
    clamp: bool = False,
    workers: int = 1,
) -> ExportResult:
    """Build training records for one stage.

    Stage 1 targets carry the merged, deduplicated grounded findings (or the
    no-finding sentence when every reader called the image normal); stage 2
    targets carry the union of the readers' diagnoses. Records are processed
    in study-id order so the output does not depend on ``workers``.
    """
    prompt = build_prompt(stage, template)
    ordered = sorted(records, key=lambda r: r.study_id)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda r: _export_one(r, stage, prompt, clamp), ordered))
    else:
        results = [_export_one(r, stage, prompt, clamp) for r in ordered]

    out = ExportResult([], [], [])
    for record, (stage_record, extra) in zip(ordered, results):
        if stage_record is None:
            log.info("skipping study %s: %s", record.study_id, extra)
            out.skipped.append((record.study_id, extra))
            continue
        out.records.append(stage_record)
        out.ground_truth.append(extra)
    return out
