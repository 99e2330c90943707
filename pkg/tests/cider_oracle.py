"""Dense-vector CIDEr-D written independently of the package implementation."""
import math
from collections import Counter

import numpy as np


def _grams(words, n):
    return [" ".join(words[i:i + n]) for i in range(len(words) - n + 1)]


def cider_d(cands, refs, sigma=6.0):
    cands = [c.lower().split() for c in cands]
    refs = [r.lower().split() for r in refs]
    n_docs = len(refs)
    scores = np.zeros(len(cands))
    for n in range(1, 5):
        vocab = sorted({g for text in cands + refs for g in _grams(text, n)})
        index = {g: k for k, g in enumerate(vocab)}
        df = Counter(g for r in refs for g in set(_grams(r, n)))
        idf = np.array([math.log(n_docs) - math.log(max(1, df[g])) for g in vocab])

        def vec(words):
            v = np.zeros(len(vocab))
            for g in _grams(words, n):
                v[index[g]] += 1
            return v * idf

        for k, (c, r) in enumerate(zip(cands, refs)):
            vc, vr = vec(c), vec(r)
            nc, nr = np.linalg.norm(vc), np.linalg.norm(vr)
            if nc == 0 or nr == 0:
                continue
            sim = float(np.minimum(vc, vr) @ vr) / (nc * nr)
            scores[k] += sim * math.exp(-((len(c) - len(r)) ** 2) / (2 * sigma ** 2))
    return scores / 4 * 10
