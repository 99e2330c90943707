"""Text formats exchanged with the language model.

Stage 1 (grounded findings)::

    Local diseases of this chest radiograph are <p>Cardiomegaly</p> {<38><48><85><65>}.

Stage 2 (global diagnoses)::

    Global diseases of this chest radiograph are Lung tumor, Pneumonia, Tuberculosis.

Parsers are tolerant scanners: they pick out well-formed fragments of model
output and report everything else as :class:`ParseWarning` values instead of
raising. The grammar is written out in ``docs/grammar.md``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional, Tuple

from .errors import DomainError
from .geometry import GRID, Finding, NormBox
from .labels import GLOBAL_LABELS, NO_FINDING, match_local_label

LOCAL_PREFIX = "Local diseases of this chest radiograph are "
GLOBAL_PREFIX = "Global diseases of this chest radiograph are "
NO_FINDINGS_SENTENCE = "The chest radiograph shows no findings."

STAGE1_INSTRUCTION = (
    "Please describe the critical findings along with their localized bounding boxes "
    "in the radiological image of a chest as much detail as possible. If there are no "
    "findings, state that the chest radiograph shows no findings."
)
STAGE2_INSTRUCTION = (
    "Given the provided chest X-ray image, which of the following diagnoses are present "
    "(select all that apply): COPD, Lung Tumor, Pneumonia, Tuberculosis, Other Disease, "
    "or No Finding?"
)

IDENTIFIER_TOKENS = ("[identify]", "[vqa]", "[grounding]")
STAGE_IDENTIFIERS = {1: "[identify]", 2: "[vqa]"}
STAGE_INSTRUCTIONS = {1: STAGE1_INSTRUCTION, 2: STAGE2_INSTRUCTION}

# warning kinds
MALFORMED_BOX = "malformed-box"
INVALID_BOX = "invalid-box"
CLAMPED = "clamped-coordinate"
UNKNOWN_LABEL = "unknown-label"
FUZZY_LABEL = "fuzzy-label"
UNCLOSED_TAG = "unclosed-tag"
ORPHAN_BOX = "orphan-box"
NO_CONTENT = "no-recognized-content"
CONFLICTING_LABELS = "conflicting-labels"


@dataclass(frozen=True)
class ParseWarning:
    kind: str
    fragment: str
    position: int = -1


@dataclass(frozen=True)
class GroundedReport:
    """Ordered findings of one study; an empty report means "no finding"."""

    findings: Tuple[Finding, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "findings", tuple(self.findings))

    @property
    def no_finding(self) -> bool:
        return not self.findings

    @property
    def labels(self) -> FrozenSet[str]:
        return frozenset(f.label for f in self.findings)


@dataclass(frozen=True)
class DiagnosisSet:
    labels: FrozenSet[str] = field(default_factory=frozenset)

    def __post_init__(self):
        labels = frozenset(self.labels)
        object.__setattr__(self, "labels", labels)
        unknown = labels - set(GLOBAL_LABELS)
        if unknown:
            raise DomainError(f"unknown global labels {sorted(unknown)}")
        if NO_FINDING in labels and len(labels) > 1:
            raise DomainError(f"{NO_FINDING!r} cannot be combined with other diagnoses")

    def ordered(self) -> List[str]:
        return [lab for lab in GLOBAL_LABELS if lab in self.labels]


@dataclass(frozen=True)
class PromptTemplate:
    image_open: str = "<Img>"
    image_close: str = "</Img>"
    image_placeholder: str = "<Image feature>"
    identifier: Optional[str] = None
    instruction: Optional[str] = None

    def __post_init__(self):
        if self.identifier is not None and self.identifier not in IDENTIFIER_TOKENS:
            raise DomainError(
                f"identifier must be one of {IDENTIFIER_TOKENS}, got {self.identifier!r}"
            )


# ---------------------------------------------------------------- serialization


def format_box(box: NormBox) -> str:
    return "{<%d><%d><%d><%d>}" % tuple(box)


def serialize_findings(r: GroundedReport) -> str:
    if r.no_finding:
        return NO_FINDINGS_SENTENCE
    parts = [f"<p>{f.label}</p> {format_box(f.box)}" for f in r.findings]
    return LOCAL_PREFIX + ",".join(parts) + "."


def serialize_diagnoses(d: DiagnosisSet) -> str:
    if not d.labels:
        raise DomainError("cannot serialize an empty diagnosis set")
    return GLOBAL_PREFIX + ", ".join(d.ordered()) + "."


def build_prompt(stage: int, template: Optional[PromptTemplate] = None) -> str:
    """Image block, identifier token and instruction, joined by single spaces."""
    if stage not in STAGE_IDENTIFIERS:
        raise DomainError(f"stage must be 1 or 2, got {stage!r}")
    t = template or PromptTemplate()
    identifier = t.identifier or STAGE_IDENTIFIERS[stage]
    instruction = t.instruction if t.instruction is not None else STAGE_INSTRUCTIONS[stage]
    return f"{t.image_open}{t.image_placeholder}{t.image_close} {identifier} {instruction}"


# ---------------------------------------------------------------------- parsing

_LABEL_RE = re.compile(r"<p>((?:(?!</?p>).)*?)</p>", re.S | re.I)
_OPEN_TAG_RE = re.compile(r"<p>", re.I)
_BRACE_RE = re.compile(r"\{[^{}]*\}")
_BOX_BODY_RE = re.compile(r"\s*<\s*(\d+)\s*>" * 4 + r"\s*")
_WS_RE = re.compile(r"\s*")
_NO_FINDINGS_RE = re.compile(r"shows\s+no\s+findings?", re.I)


def _parse_box(body: str, pos: int, warnings: List[ParseWarning]) -> Optional[NormBox]:
    m = _BOX_BODY_RE.fullmatch(body)
    if m is None:
        warnings.append(ParseWarning(MALFORMED_BOX, "{" + body + "}", pos))
        return None
    coords = []
    for raw in m.groups():
        value = int(raw)
        if value > GRID:
            warnings.append(ParseWarning(CLAMPED, raw, pos))
            value = GRID
        coords.append(value)
    x1, y1, x2, y2 = coords
    if x1 > x2 or y1 > y2:
        warnings.append(ParseWarning(INVALID_BOX, "{" + body + "}", pos))
        return None
    return NormBox(x1, y1, x2, y2)


def parse_grounded_report(s: str) -> Tuple[GroundedReport, List[ParseWarning]]:
    """Extract ``<p>label</p> {<x1><y1><x2><y2>}`` pairs from free text.

    Never raises on text input. Labels are matched case-insensitively, with a
    fuzzy fallback; coordinates above 100 are clamped. Every fragment that
    cannot be turned into a finding yields a warning.
    """
    if not isinstance(s, str):
        raise TypeError(f"expected str, got {type(s).__name__}")

    warnings: List[ParseWarning] = []
    findings: List[Finding] = []
    consumed = set()
    last_end = 0

    for m in _LABEL_RE.finditer(s):
        for stray in _OPEN_TAG_RE.finditer(s, last_end, m.start()):
            warnings.append(ParseWarning(UNCLOSED_TAG, s[stray.start():stray.start() + 40], stray.start()))
        last_end = m.end()

        raw_label = m.group(1)
        brace_at = _WS_RE.match(s, m.end()).end()
        box = None
        if s.startswith("{", brace_at):
            close = _BRACE_RE.match(s, brace_at)
            if close is None:
                warnings.append(ParseWarning(MALFORMED_BOX, s[brace_at:brace_at + 40], brace_at))
            else:
                consumed.add(close.start())
                last_end = close.end()
                box = _parse_box(close.group(0)[1:-1], brace_at, warnings)
        else:
            warnings.append(ParseWarning(MALFORMED_BOX, m.group(0), m.start()))

        label, exact = match_local_label(raw_label)
        if label is None:
            warnings.append(ParseWarning(UNKNOWN_LABEL, raw_label, m.start()))
            continue
        if not exact:
            warnings.append(ParseWarning(FUZZY_LABEL, raw_label, m.start()))
        if box is not None:
            findings.append(Finding(label, box))

    for stray in _OPEN_TAG_RE.finditer(s, last_end):
        warnings.append(ParseWarning(UNCLOSED_TAG, s[stray.start():stray.start() + 40], stray.start()))

    for b in _BRACE_RE.finditer(s):
        if b.start() not in consumed:
            warnings.append(ParseWarning(ORPHAN_BOX, b.group(0), b.start()))

    if not findings and not warnings and not _NO_FINDINGS_RE.search(s):
        warnings.append(ParseWarning(NO_CONTENT, s[:40], 0))
    return GroundedReport(tuple(findings)), warnings


def _label_pattern(label: str) -> str:
    words = [re.escape(w) for w in label.split()]
    body = r"\s+".join(words)
    if label == NO_FINDING:
        body += "s?"
    if label == "Other disease":
        body += "s?"
    return body


# longest first so multi-word labels win over any shorter overlap
_GLOBAL_SCAN = re.compile(
    r"(?<![\w])("
    + "|".join(_label_pattern(lab) for lab in sorted(GLOBAL_LABELS, key=len, reverse=True))
    + r")(?![\w])",
    re.I,
)
_GLOBAL_BY_KEY = {re.sub(r"\s+", " ", lab).casefold(): lab for lab in GLOBAL_LABELS}


def parse_diagnoses(s: str) -> Tuple[DiagnosisSet, List[ParseWarning]]:
    """Scan text for the six diagnosis names, case-insensitively.

    When "No finding" appears next to real diagnoses the diagnoses win and a
    ``conflicting-labels`` warning is emitted.
    """
    if not isinstance(s, str):
        raise TypeError(f"expected str, got {type(s).__name__}")
    warnings: List[ParseWarning] = []
    found = set()
    for m in _GLOBAL_SCAN.finditer(s):
        key = re.sub(r"\s+", " ", m.group(1)).casefold()
        if key not in _GLOBAL_BY_KEY:
            key = key[:-1]  # trailing plural "s"
        found.add(_GLOBAL_BY_KEY[key])
    if not found:
        warnings.append(ParseWarning(NO_CONTENT, s[:40], 0))
    elif NO_FINDING in found and len(found) > 1:
        warnings.append(ParseWarning(CONFLICTING_LABELS, ", ".join(sorted(found)), 0))
        found.discard(NO_FINDING)
    return DiagnosisSet(frozenset(found)), warnings


_STRIP_BOX_RE = re.compile(r"\s*\{\s*<\d+>\s*<\d+>\s*<\d+>\s*<\d+>\s*\}")
_TAG_RE = re.compile(r"</?p>", re.I)


def strip_localization(s: str, strip_tags: bool = True) -> str:
    """Remove every ``{<x1><y1><x2><y2>}`` group (and optionally ``<p>`` tags)."""
    out, n_boxes = _STRIP_BOX_RE.subn("", s)
    n_tags = 0
    if strip_tags:
        out, n_tags = _TAG_RE.subn("", out)
    if n_boxes == 0 and n_tags == 0:
        return s
    out = re.sub(r"[ \t]{2,}", " ", out)
    out = re.sub(r",(\s*,)+", ",", out)
    out = re.sub(r"[ \t]+([,.])", r"\1", out)
    out = re.sub(r"^[\s,]+", "", out)
    return out.strip()

