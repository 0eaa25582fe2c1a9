"""Reference-free text metrics: BLEU-4, ROUGE-L, a light METEOR, and
closed-answer accuracy.

Tokenizer, stated bit-exactly: lowercase the string, split on Unicode
whitespace, strip leading and trailing punctuation (Unicode category P*) from
each token, drop tokens that become empty.
"""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from typing import Sequence

from .errors import LengthMismatchError

_STEM_SUFFIXES = ("ing", "ed", "ly", "es", "s")
_MIN_STEM = 3


def _strip_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and unicodedata.category(token[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(token[end - 1]).startswith("P"):
        end -= 1
    return token[start:end]


def tokenize(text: str) -> list[str]:
    tokens = []
    for raw in text.lower().split():
        tok = _strip_punct(raw)
        if tok:
            tokens.append(tok)
    return tokens


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate: str, references: Sequence[str]) -> float:
    """Geometric mean of modified 1..4-gram precisions times brevity penalty.

    N-gram counts are add-one smoothed for n >= 2 (short answers would
    otherwise zero out); a zero unigram precision still yields 0.0.
    """
    cand = tokenize(candidate)
    refs = [tokenize(r) for r in references]
    refs = [r for r in refs if r]
    if not cand or not refs:
        return 0.0

    log_sum = 0.0
    for n in range(1, 5):
        total = max(len(cand) - n + 1, 0)
        cand_counts = _ngrams(cand, n)
        clipped = 0
        for gram, count in cand_counts.items():
            best = max(_ngrams(r, n).get(gram, 0) for r in refs)
            clipped += min(count, best)
        if n == 1:
            if clipped == 0:
                return 0.0
            precision = clipped / total
        else:
            precision = (clipped + 1) / (total + 1)
        log_sum += math.log(precision)

    c = len(cand)
    # Closest reference length; ties go to the shorter reference.
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / 4.0)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for tok in a:
        cur = [0]
        for j, btok in enumerate(b, start=1):
            if tok == btok:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """LCS F-measure: P = LCS/|cand|, R = LCS/|ref|, F = 2PR/(P+R)."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(cand)
    r = lcs / len(ref)
    return 2 * p * r / (p + r)


def _stem(token: str) -> str:
    for suffix in _STEM_SUFFIXES:
        if token.endswith(suffix) and len(token) - len(suffix) >= _MIN_STEM:
            return token[: -len(suffix)]
    return token


def meteor_lite(candidate: str, reference: str) -> float:
    """Two-stage unigram METEOR: exact matches first, then single-suffix stem
    matches (ing/ed/ly/es/s, stem >= 3 chars).  Each candidate token matches
    the earliest unmatched reference token.  F_mean = 10PR/(R+9P); chunk
    penalty 0.5*(chunks/matches)^3 over the final alignment.
    """
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0

    ref_used = [False] * len(ref)
    aligned: list[int | None] = [None] * len(cand)
    for i, tok in enumerate(cand):
        for j, rtok in enumerate(ref):
            if not ref_used[j] and rtok == tok:
                ref_used[j] = True
                aligned[i] = j
                break
    for i, tok in enumerate(cand):
        if aligned[i] is not None:
            continue
        st = _stem(tok)
        for j, rtok in enumerate(ref):
            if not ref_used[j] and _stem(rtok) == st:
                ref_used[j] = True
                aligned[i] = j
                break

    pairs = [(i, j) for i, j in enumerate(aligned) if j is not None]
    m = len(pairs)
    if m == 0:
        return 0.0
    p = m / len(cand)
    r = m / len(ref)
    f_mean = 10 * p * r / (r + 9 * p)
    chunks = 1
    for (i1, j1), (i2, j2) in zip(pairs, pairs[1:]):
        if i2 != i1 + 1 or j2 != j1 + 1:
            chunks += 1
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1.0 - penalty)


def _contains_answer(pred_tokens: list[str], gold_tokens: list[str]) -> bool:
    if not gold_tokens:
        return False
    k = len(gold_tokens)
    return any(
        pred_tokens[i : i + k] == gold_tokens
        for i in range(len(pred_tokens) - k + 1)
    )


def vqa_accuracy(preds: Sequence[str], golds: Sequence[str]) -> float:
    """Fraction of answers whose normalized gold token sequence appears as a
    contiguous subsequence of the normalized prediction.  Normalization is the
    module tokenizer, so bare equality also counts.
    """
    if len(preds) != len(golds):
        raise LengthMismatchError(
            f"{len(preds)} predictions vs {len(golds)} gold answers"
        )
    if not preds:
        return 0.0
    hits = sum(
        _contains_answer(tokenize(p), tokenize(g)) for p, g in zip(preds, golds)
    )
    return hits / len(preds)
