"""Sequence accuracy, top-k accuracy and corpus BLEU-4."""
from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

from .errors import LengthMismatch

MAX_ORDER = 4


def _check_aligned(predictions: Sequence, references: Sequence) -> None:
    if len(predictions) != len(references):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(references)} references")
    if not predictions:
        raise ValueError("no predictions to score")


def sequence_accuracy(predictions: Sequence[str], references: Sequence[str]) -> float:
    _check_aligned(predictions, references)
    hits = sum(p.strip() == r.strip() for p, r in zip(predictions, references))
    return hits / len(predictions)


def topk_accuracy(ranked_predictions: Sequence[Sequence[str]], references: Sequence[str],
                  k: int) -> float:
    _check_aligned(ranked_predictions, references)
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = 0
    for ranked, ref in zip(ranked_predictions, references):
        if not ranked:
            raise ValueError("every ranked prediction list needs at least one entry")
        hits += ref.strip() in [p.strip() for p in ranked[:k]]
    return hits / len(references)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(predictions: Sequence[str], references: Sequence[str]):
    """Corpus totals: (matches per order, candidates per order, hyp length, ref length)."""
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    c_len = r_len = 0
    for pred, ref in zip(predictions, references):
        hyp, gold = pred.split(), ref.split()
        c_len += len(hyp)
        r_len += len(gold)
        for n in range(1, MAX_ORDER + 1):
            h, g = _ngrams(hyp, n), _ngrams(gold, n)
            matches[n - 1] += sum(min(cnt, g[ng]) for ng, cnt in h.items())
            totals[n - 1] += max(0, len(hyp) - n + 1)
    return matches, totals, c_len, r_len


def corpus_bleu(predictions: Sequence[str], references: Sequence[str]) -> float:
    """BLEU-4 on whitespace tokens, scaled to [0, 100].

    Orders 2-4 with no clipped matches get add-one smoothing on numerator
    and denominator; no unigram matches at all scores 0. Brevity penalty
    exp(1 - r/c) applies when the corpus hypothesis length c is below the
    reference length r.
    """
    _check_aligned(predictions, references)
    matches, totals, c, r = bleu_stats(predictions, references)
    if c == 0 or matches[0] == 0:
        return 0.0
    log_p = 0.0
    for n in range(MAX_ORDER):
        m, t = matches[n], totals[n]
        if m == 0:
            m, t = m + 1, t + 1
        log_p += math.log(m / t) / MAX_ORDER
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_p)
