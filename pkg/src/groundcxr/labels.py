"""Closed label vocabularies of the VinDr-CXR annotation scheme."""
from __future__ import annotations

import difflib
import re
from typing import Optional

LOCAL_LABELS = (
    "Aortic enlargement",
    "Atelectasis",
    "Calcification",
    "Cardiomegaly",
    "Clavicle fracture",
    "Consolidation",
    "Edema",
    "Emphysema",
    "Enlarged PA",
    "ILD",
    "Infiltration",
    "Lung Opacity",
    "Lung cavity",
    "Lung cyst",
    "Mediastinal shift",
    "Nodule/Mass",
    "Pleural effusion",
    "Pleural thickening",
    "Pneumothorax",
    "Pulmonary fibrosis",
    "Rib fracture",
    "Other lesion",
)

NO_FINDING = "No finding"

GLOBAL_LABELS = (
    "COPD",
    "Lung tumor",
    "Pneumonia",
    "Tuberculosis",
    "Other disease",
    NO_FINDING,
)

# spellings seen in the public release and in model output
_ALIASES = {
    "other diseases": "Other disease",
    "no findings": NO_FINDING,
    "lung tumour": "Lung tumor",
    "nodule / mass": "Nodule/Mass",
}

FUZZY_CUTOFF = 0.85


def _key(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip().casefold()


_LOCAL_KEYS = {_key(lab): lab for lab in LOCAL_LABELS}
_GLOBAL_KEYS = {_key(lab): lab for lab in GLOBAL_LABELS}


def _match(text: str, table: dict, fuzzy: bool) -> tuple[Optional[str], bool]:
    key = _key(text)
    if key in table:
        return table[key], True
    alias = _ALIASES.get(key)
    if alias is not None and _key(alias) in table:
        return alias, True
    if fuzzy and key:
        close = difflib.get_close_matches(key, list(table), n=1, cutoff=FUZZY_CUTOFF)
        if close:
            return table[close[0]], False
    return None, False


def match_local_label(text: str, fuzzy: bool = True) -> tuple[Optional[str], bool]:
    """Map free text to a canonical local label.

    Returns ``(label, exact)``; ``label`` is None when nothing is close enough.
    """
    return _match(text, _LOCAL_KEYS, fuzzy)


def match_global_label(text: str, fuzzy: bool = True) -> tuple[Optional[str], bool]:
    return _match(text, _GLOBAL_KEYS, fuzzy)


def canonical_local(text: str) -> str:
    label, _ = match_local_label(text, fuzzy=False)
    if label is None:
        raise KeyError(text)
    return label


def canonical_global(text: str) -> str:
    label, _ = match_global_label(text, fuzzy=False)
    if label is None:
        raise KeyError(text)
    return label
