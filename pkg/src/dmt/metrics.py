"""Corpus BLEU, Pairwise-BLEU and Pearson correlation."""
from __future__ import annotations

import math
import statistics
from collections import Counter
from dataclasses import dataclass
from itertools import permutations

MAX_ORDER = 4


class MetricError(ValueError):
    pass


@dataclass
class BleuReport:
    bleu: float
    precisions: list[float]
    bp: float
    hyp_len: int
    ref_len: int

    def to_dict(self) -> dict:
        return {"bleu": self.bleu, "precisions": self.precisions, "bp": self.bp,
                "hyp_len": self.hyp_len, "ref_len": self.ref_len}


def _norm(seq):
    return [t.lower() if isinstance(t, str) else t for t in seq]


def _ngrams(seq, n):
    return Counter(tuple(seq[i: i + n]) for i in range(len(seq) - n + 1))


def corpus_bleu(hypotheses, references) -> BleuReport:
    """Case-insensitive corpus BLEU-4, single reference per sentence.

    An order with zero clipped matches uses 1 / (2 * hypothesis n-gram count)
    as its precision. An order the hypotheses are too short to contain at all
    counts as precision 1, so identical corpora always score 100.
    """
    if len(hypotheses) != len(references):
        raise MetricError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise MetricError("empty corpus")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = _norm(hyp), _norm(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, MAX_ORDER + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)

    precisions = []
    for m, t in zip(matches, totals):
        if t == 0:
            precisions.append(1.0)
        elif m == 0:
            precisions.append(1.0 / (2 * t))
        else:
            precisions.append(m / t)

    if hyp_len == 0:
        bp = 0.0
    elif hyp_len < ref_len:
        bp = math.exp(1 - ref_len / hyp_len)
    else:
        bp = 1.0
    if bp == 0.0:
        bleu = 0.0
    else:
        bleu = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER)
    return BleuReport(bleu, precisions, bp, hyp_len, ref_len)


def pairwise_bleu(groups) -> float:
    """Mean corpus BLEU over all ordered pairs (i, j), i != j, of output groups."""
    groups = [getattr(g, "outputs", g) for g in groups]
    if len(groups) < 2:
        raise MetricError("Pairwise-BLEU needs at least 2 groups")
    n = len(groups[0])
    if any(len(g) != n for g in groups):
        raise MetricError("groups cover different numbers of sentences")
    scores = [corpus_bleu(groups[i], groups[j]).bleu for i, j in permutations(range(len(groups)), 2)]
    return sum(scores) / len(scores)


def pearson_corr(x, y) -> float:
    if len(x) != len(y):
        raise MetricError("pearson_corr needs equal-length inputs")
    if len(x) < 2:
        raise MetricError("pearson_corr needs at least 2 points")
    try:
        return statistics.correlation([float(v) for v in x], [float(v) for v in y])
    except statistics.StatisticsError as exc:
        raise MetricError(f"correlation undefined: {exc}") from exc
