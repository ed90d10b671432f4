"""BLEU-n, ROUGE-L and CIDEr-D on pre-tokenized captions.

Tokens may be strings or ids; nothing is re-tokenized.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Sequence

Tokens = Sequence[Hashable]


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check_refs(references: Sequence[Tokens]) -> None:
    if not references:
        raise ValueError("empty reference set")


def modified_precision(candidate: Tokens, references: Sequence[Tokens], n: int) -> tuple[int, int]:
    """Clipped n-gram matches and the candidate's n-gram count."""
    cand = ngrams(candidate, n)
    max_ref: Counter = Counter()
    for ref in references:
        for ng, c in ngrams(ref, n).items():
            max_ref[ng] = max(max_ref[ng], c)
    matched = sum(min(c, max_ref[ng]) for ng, c in cand.items())
    return matched, sum(cand.values())


def brevity_penalty(c: int, references: Sequence[Tokens]) -> float:
    # closest reference length, shorter wins ties
    r = min((abs(len(ref) - c), len(ref)) for ref in references)[1]
    return 1.0 if c >= r else math.exp(1.0 - r / c)


def bleu(candidate: Tokens, references: Sequence[Tokens], max_n: int = 4) -> list[float]:
    """Cumulative BLEU-1..max_n for one sentence."""
    _check_refs(references)
    if len(candidate) == 0:
        raise ValueError("empty candidate")
    bp = brevity_penalty(len(candidate), references)
    scores, log_sum = [], 0.0
    for n in range(1, max_n + 1):
        matched, count = modified_precision(candidate, references, n)
        if matched == 0 or math.isinf(log_sum):
            log_sum = -math.inf
            scores.append(0.0)
            continue
        log_sum += math.log(matched / count)
        scores.append(bp * math.exp(log_sum / n))
    return scores


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Tokens, references: Sequence[Tokens], beta: float = 1.2) -> float:
    _check_refs(references)
    if len(candidate) == 0:
        raise ValueError("empty candidate")
    best = 0.0
    for ref in references:
        lcs = lcs_length(candidate, ref)
        if lcs == 0:
            continue
        p, r = lcs / len(candidate), lcs / len(ref)
        best = max(best, (1 + beta**2) * p * r / (r + beta**2 * p))
    return best


@dataclass
class CorpusStats:
    """Document frequencies over reference sets (one set per image)."""

    df: Counter
    n_docs: int
    max_n: int = 4

    @classmethod
    def build(cls, reference_sets: Sequence[Sequence[Tokens]], max_n: int = 4) -> "CorpusStats":
        df: Counter = Counter()
        for refs in reference_sets:
            seen = set()
            for ref in refs:
                for n in range(1, max_n + 1):
                    seen.update(ngrams(ref, n))
            df.update(seen)
        return cls(df, len(reference_sets), max_n)

    def idf(self, ng: tuple) -> float:
        return math.log(self.n_docs) - math.log(max(self.df.get(ng, 0), 1))


def _tfidf(tokens: Tokens, stats: CorpusStats) -> tuple[list[dict], list[float]]:
    vecs, norms = [], []
    for n in range(1, stats.max_n + 1):
        vec = {ng: tf * stats.idf(ng) for ng, tf in ngrams(tokens, n).items()}
        vecs.append(vec)
        norms.append(math.sqrt(sum(x * x for x in vec.values())))
    return vecs, norms


def cider_d(candidate: Tokens, references: Sequence[Tokens], stats: CorpusStats, sigma: float = 6.0) -> float:
    """Clipped TF-IDF cosine with a Gaussian length penalty, scaled to [0, 10]."""
    _check_refs(references)
    if stats.n_docs == 0:
        raise ValueError("empty corpus statistics")
    c_vecs, c_norms = _tfidf(candidate, stats)
    total = 0.0
    for ref in references:
        r_vecs, r_norms = _tfidf(ref, stats)
        delta = len(candidate) - len(ref)
        penalty = math.exp(-(delta**2) / (2 * sigma**2))
        per_n = 0.0
        for cv, cn, rv, rn in zip(c_vecs, c_norms, r_vecs, r_norms):
            if cn == 0 or rn == 0:
                continue
            dot = sum(min(x, rv[ng]) * rv[ng] for ng, x in cv.items() if ng in rv)
            per_n += dot / (cn * rn) * penalty
        total += per_n / stats.max_n
    return 10.0 * total / len(references)


def score_all(candidate: Tokens, references: Sequence[Tokens], stats: CorpusStats) -> dict[str, float]:
    b = bleu(candidate, references) if len(candidate) else [0.0] * 4
    out = {f"bleu_{n}": s for n, s in enumerate(b, 1)}
    out["rouge_l"] = rouge_l(candidate, references) if len(candidate) else 0.0
    out["cider_d"] = cider_d(candidate, references, stats)
    return out


def corpus_scores(candidates: Sequence[Tokens], reference_sets: Sequence[Sequence[Tokens]],
                  stats: CorpusStats | None = None) -> tuple[list[dict[str, float]], dict[str, float]]:
    """Per-sample scores and their means; document frequencies come from the references."""
    if len(candidates) != len(reference_sets):
        raise ValueError("candidate and reference counts differ")
    stats = CorpusStats.build(reference_sets) if stats is None else stats
    rows = [score_all(c, r, stats) for c, r in zip(candidates, reference_sets)]
    keys = rows[0].keys() if rows else []
    mean = {k: sum(r[k] for r in rows) / len(rows) for k in keys}
    return rows, mean
