"""Independent reference computations used by several test modules."""
import itertools

import numpy as np


def raster_iou(a, b, size=200):
    """IoU by painting both boxes onto an integer grid and counting cells."""
    ga = np.zeros((size, size), dtype=bool)
    gb = np.zeros((size, size), dtype=bool)
    ga[a[1]:a[3], a[0]:a[2]] = True
    gb[b[1]:b[3], b[0]:b[2]] = True
    union = np.count_nonzero(ga | gb)
    return np.count_nonzero(ga & gb) / union


def brute_force_report(y_true, y_pred, labels):
    """Confusion counts by enumerating every (sample, label) cell."""
    cells = {lab: {"tp": 0, "fp": 0, "fn": 0} for lab in labels}
    per_sample = []
    for t, p in zip(y_true, y_pred):
        tp = fp = fn = 0
        for lab in labels:
            in_t, in_p = lab in t, lab in p
            if in_t and in_p:
                cells[lab]["tp"] += 1
                tp += 1
            elif in_p:
                cells[lab]["fp"] += 1
                fp += 1
            elif in_t:
                cells[lab]["fn"] += 1
                fn += 1
        if tp + fp + fn == 0:
            per_sample.append((1.0, 1.0, 1.0))
        else:
            prec = tp / (tp + fp) if tp + fp else 0.0
            rec = tp / (tp + fn) if tp + fn else 0.0
            f1 = 2 * tp / (2 * tp + fp + fn)
            per_sample.append((prec, rec, f1))

    def prf(tp, fp, fn):
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        return prec, rec, f1

    per_class = {lab: prf(c["tp"], c["fp"], c["fn"]) for lab, c in cells.items()}
    support = {lab: c["tp"] + c["fn"] for lab, c in cells.items()}
    total = sum(support.values())
    out = {
        "micro avg": prf(*(sum(c[k] for c in cells.values()) for k in ("tp", "fp", "fn"))),
        "macro avg": tuple(np.mean([per_class[lab][i] for lab in labels]) for i in range(3)),
        "weighted avg": tuple(
            sum(per_class[lab][i] * support[lab] for lab in labels) / total if total else 0.0
            for i in range(3)
        ),
        "samples avg": tuple(np.mean([s[i] for s in per_sample]) for i in range(3)),
    }
    return per_class, support, out


def best_chunk_alignment(cand, ref):
    """Fewest-chunk maximum exact alignment by exhaustive search (short inputs only)."""
    best = None
    positions = [[j for j, r in enumerate(ref) if r == c] + [None] for c in cand]
    for choice in itertools.product(*positions):
        used = [j for j in choice if j is not None]
        if len(used) != len(set(used)):
            continue
        pairs = [(i, j) for i, j in enumerate(choice) if j is not None]
        chunks = 0
        prev = None
        for i, j in pairs:
            if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
                chunks += 1
            prev = (i, j)
        key = (-len(pairs), chunks)
        if best is None or key < best:
            best = key
    return -best[0], best[1]
