"""N-gram text metrics written from their published definitions.

All metrics share one tokenizer (lowercase, punctuation split off as separate
tokens). BLEU is corpus-level; ROUGE, METEOR and CIDEr-D are means over
(candidate, reference) pairs.
"""
from __future__ import annotations

import logging
import math
import re
from collections import Counter
from typing import Dict, List, Sequence, Tuple

log = logging.getLogger(__name__)

TextPair = Tuple[str, str]  # (candidate, reference)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> List[str]:
    return _TOKEN_RE.findall(text.lower())


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# ------------------------------------------------------------------------ BLEU


def bleu(pairs: Sequence[TextPair], max_n: int = 4) -> List[float]:
    """Corpus-level cumulative BLEU-1..max_n without smoothing.

    Clipped n-gram matches and candidate n-gram totals are pooled over the
    corpus; the brevity penalty uses total candidate and reference lengths.
    """
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    for cand, ref in pairs:
        c, r = tokenize(cand), tokenize(ref)
        cand_len += len(c)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            cn, rn = ngrams(c, n), ngrams(r, n)
            matches[n - 1] += sum(min(count, rn[g]) for g, count in cn.items())
            totals[n - 1] += sum(cn.values())

    if cand_len == 0:
        return [0.0] * max_n
    bp = min(1.0, math.exp(1 - ref_len / cand_len))
    scores, log_sum = [], 0.0
    for n in range(max_n):
        if matches[n] == 0 or scores and scores[-1] == 0.0:
            scores.append(0.0)
            continue
        log_sum += math.log(matches[n] / totals[n])
        scores.append(bp * math.exp(log_sum / (n + 1)))
    return scores


# ----------------------------------------------------------------------- ROUGE


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def rouge_n(cand: str, ref: str, n: int) -> Tuple[float, float, float]:
    c, r = ngrams(tokenize(cand), n), ngrams(tokenize(ref), n)
    overlap = sum(min(count, r[g]) for g, count in c.items())
    p = overlap / sum(c.values()) if c else 0.0
    rec = overlap / sum(r.values()) if r else 0.0
    return p, rec, _f1(p, rec)


def _lcs_table(a: Sequence[str], b: Sequence[str]) -> List[List[int]]:
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i, x in enumerate(a, 1):
        row, prev = table[i], table[i - 1]
        for j, y in enumerate(b, 1):
            row[j] = prev[j - 1] + 1 if x == y else max(prev[j], row[j - 1])
    return table


def _lcs_indices(ref: Sequence[str], cand: Sequence[str]) -> set:
    """Indices into ``ref`` of one longest common subsequence."""
    table = _lcs_table(ref, cand)
    i, j, out = len(ref), len(cand), set()
    while i and j:
        if ref[i - 1] == cand[j - 1]:
            out.add(i - 1)
            i, j = i - 1, j - 1
        elif table[i - 1][j] >= table[i][j - 1]:
            i -= 1
        else:
            j -= 1
    return out


def rouge_l(cand: str, ref: str) -> Tuple[float, float, float]:
    c, r = tokenize(cand), tokenize(ref)
    if not c or not r:
        return 0.0, 0.0, 0.0
    lcs = _lcs_table(r, c)[-1][-1]
    p, rec = lcs / len(c), lcs / len(r)
    return p, rec, _f1(p, rec)


def rouge_lsum(cand: str, ref: str) -> Tuple[float, float, float]:
    """Summary-level ROUGE-L over newline-separated sentences with union LCS."""
    c_sents = [tokenize(s) for s in cand.split("\n") if tokenize(s)]
    r_sents = [tokenize(s) for s in ref.split("\n") if tokenize(s)]
    c_total = sum(len(s) for s in c_sents)
    r_total = sum(len(s) for s in r_sents)
    if not c_total or not r_total:
        return 0.0, 0.0, 0.0

    c_counts = Counter(t for s in c_sents for t in s)
    r_counts = Counter(t for s in r_sents for t in s)
    hits = 0
    for r in r_sents:
        union = set()
        for c in c_sents:
            union |= _lcs_indices(r, c)
        for idx in sorted(union):
            token = r[idx]
            if c_counts[token] > 0 and r_counts[token] > 0:
                hits += 1
                c_counts[token] -= 1
                r_counts[token] -= 1
    p, rec = hits / c_total, hits / r_total
    return p, rec, _f1(p, rec)


def rouge(pairs: Sequence[TextPair]) -> Dict[str, float]:
    """Mean F1 over pairs for ROUGE-1, ROUGE-2, ROUGE-L and ROUGE-LSUM."""
    if not pairs:
        return {"ROUGE-1": 0.0, "ROUGE-2": 0.0, "ROUGE-L": 0.0, "ROUGE-LSUM": 0.0}
    scores = {
        "ROUGE-1": [rouge_n(c, r, 1)[2] for c, r in pairs],
        "ROUGE-2": [rouge_n(c, r, 2)[2] for c, r in pairs],
        "ROUGE-L": [rouge_l(c, r)[2] for c, r in pairs],
        "ROUGE-LSUM": [rouge_lsum(c, r)[2] for c, r in pairs],
    }
    return {k: math.fsum(v) / len(pairs) for k, v in scores.items()}


# ---------------------------------------------------------------------- METEOR

METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5

_SUFFIXES = (("sses", "ss"), ("ies", "y"), ("ing", ""), ("ed", ""), ("ly", ""), ("es", ""), ("s", ""))


def stem(word: str) -> str:
    """Crude suffix stripper; keeps at least three characters of the stem."""
    if word.endswith("ss"):
        return word
    for suffix, repl in _SUFFIXES:
        if word.endswith(suffix) and len(word) - len(suffix) >= 3:
            return word[: -len(suffix)] + repl
    return word


def _align_stage(cand, ref, keys_c, keys_r, alignment: Dict[int, int]) -> None:
    used_ref = set(alignment.values())

    def run_length(i, j):
        length = 0
        while (i + length < len(cand) and j + length < len(ref)
               and i + length not in alignment and j + length not in used_ref
               and keys_c[i + length] == keys_r[j + length]):
            length += 1
        return length

    for i in range(len(cand)):
        if i in alignment:
            continue
        options = [j for j in range(len(ref)) if j not in used_ref and keys_r[j] == keys_c[i]]
        if not options:
            continue
        prev = alignment.get(i - 1)
        if prev is not None and prev + 1 in options:
            j = prev + 1
        else:
            j = max(options, key=lambda j: (run_length(i, j), -j))
        alignment[i] = j
        used_ref.add(j)


def meteor_alignment(cand: Sequence[str], ref: Sequence[str]) -> Dict[int, int]:
    """Candidate-index -> reference-index map from exact then stem matching.

    Within a stage the matcher extends the current chunk when it can and
    otherwise picks the reference position starting the longest common run.
    """
    alignment: Dict[int, int] = {}
    _align_stage(cand, ref, list(cand), list(ref), alignment)
    _align_stage(cand, ref, [stem(t) for t in cand], [stem(t) for t in ref], alignment)
    return alignment


def count_chunks(alignment: Dict[int, int]) -> int:
    chunks, prev = 0, None
    for i in sorted(alignment):
        j = alignment[i]
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_from_counts(matches: int, chunks: int, cand_len: int, ref_len: int) -> float:
    if matches == 0:
        return 0.0
    p, r = matches / cand_len, matches / ref_len
    f_mean = p * r / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * r)
    penalty = METEOR_GAMMA * (chunks / matches) ** METEOR_BETA
    return f_mean * (1 - penalty)


def meteor_score(cand: str, ref: str) -> float:
    c, r = tokenize(cand), tokenize(ref)
    alignment = meteor_alignment(c, r)
    return meteor_from_counts(len(alignment), count_chunks(alignment), len(c), len(r))


def meteor(pairs: Sequence[TextPair]) -> float:
    if not pairs:
        return 0.0
    return math.fsum(meteor_score(c, r) for c, r in pairs) / len(pairs)


# ---------------------------------------------------------------------- CIDEr-D

CIDER_SIGMA = 6.0
CIDER_MAX_N = 4
CIDER_SCALE = 10.0


def _tfidf(counts: List[Counter], df: Counter, log_n: float):
    vec, norms = [], []
    for n_counts in counts:
        v = {g: tf * (log_n - math.log(max(1.0, df[g]))) for g, tf in n_counts.items()}
        vec.append(v)
        norms.append(math.sqrt(sum(x * x for x in v.values())))
    return vec, norms


def cider_scores(pairs: Sequence[TextPair]) -> List[float]:
    """Per-pair CIDEr-D (x10) with document frequencies taken from the references."""
    if not pairs:
        return []
    if len(pairs) < 2:
        log.warning("CIDEr-D on a single pair: every IDF weight is zero")
    cands = [tokenize(c) for c, _ in pairs]
    refs = [tokenize(r) for _, r in pairs]
    ref_counts = [[ngrams(r, n) for n in range(1, CIDER_MAX_N + 1)] for r in refs]
    df = Counter()
    for per_n in ref_counts:
        for counts in per_n:
            df.update(counts.keys())
    log_n = math.log(float(len(pairs)))

    out = []
    for c_tokens, r_tokens, r_counts in zip(cands, refs, ref_counts):
        c_counts = [ngrams(c_tokens, n) for n in range(1, CIDER_MAX_N + 1)]
        c_vec, c_norm = _tfidf(c_counts, df, log_n)
        r_vec, r_norm = _tfidf(r_counts, df, log_n)
        delta = len(c_tokens) - len(r_tokens)
        length_penalty = math.exp(-(delta ** 2) / (2 * CIDER_SIGMA ** 2))
        total = 0.0
        for n in range(CIDER_MAX_N):
            dot = sum(min(v, r_vec[n].get(g, 0.0)) * r_vec[n].get(g, 0.0) for g, v in c_vec[n].items())
            if c_norm[n] and r_norm[n]:
                total += dot / (c_norm[n] * r_norm[n]) * length_penalty
        out.append(total / CIDER_MAX_N * CIDER_SCALE)
    return out


def cider(pairs: Sequence[TextPair]) -> float:
    scores = cider_scores(pairs)
    return math.fsum(scores) / len(scores) if scores else 0.0


def text_scores(pairs: Sequence[TextPair]) -> Dict[str, float]:
    out = dict(rouge(pairs))
    for n, value in enumerate(bleu(pairs), start=1):
        out[f"BLEU-{n}"] = value
    out["METEOR"] = meteor(pairs)
    out["CIDEr"] = cider(pairs)
    return out
