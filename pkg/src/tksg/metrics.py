"""NLG metrics (corpus BLEU-1..4, ROUGE-L, METEOR-lite) and 14-label CE metrics.

All text inputs are token lists (or raw strings, which are tokenized with the
corpus tokenizer).  One reference per candidate.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

from .corpus import tokenize

Tokens = Sequence[str]


def _prep(texts) -> list[list[str]]:
    return [tokenize(t) if isinstance(t, str) else list(t) for t in texts]


def _check(candidates, references):
    cands, refs = _prep(candidates), _prep(references)
    if len(cands) != len(refs):
        raise ValueError(f"{len(cands)} candidates vs {len(refs)} references")
    if not cands:
        raise ValueError("empty corpus")
    return cands, refs


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates, references, n: int = 4) -> float:
    """Corpus BLEU-n: geometric mean of clipped n-gram precisions (orders 1..n) x brevity penalty."""
    cands, refs = _check(candidates, references)
    matched = [0] * n
    total = [0] * n
    c_len = r_len = 0
    for c, r in zip(cands, refs):
        c_len += len(c)
        r_len += len(r)
        for k in range(1, n + 1):
            cc, rc = _ngrams(c, k), _ngrams(r, k)
            matched[k - 1] += sum(min(cnt, rc[g]) for g, cnt in cc.items())
            total[k - 1] += max(len(c) - k + 1, 0)
    if c_len == 0 or min(matched) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matched, total)) / n
    bp = math.exp(min(0.0, 1.0 - r_len / c_len))
    return bp * math.exp(log_p)


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(c: Tokens, r: Tokens, beta: float = 1.2) -> float:
    if not c or not r:
        return 0.0
    lcs = lcs_length(c, r)
    if lcs == 0:
        return 0.0
    p, rec = lcs / len(c), lcs / len(r)
    return (1 + beta ** 2) * p * rec / (rec + beta ** 2 * p)


def rouge_l(candidates, references, beta: float = 1.2) -> float:
    cands, refs = _check(candidates, references)
    return sum(rouge_l_pair(c, r, beta) for c, r in zip(cands, refs)) / len(cands)


def align_exact(c: Tokens, r: Tokens) -> list[tuple[int, int]]:
    """k-th occurrence of a word in the candidate pairs with its k-th occurrence in the reference."""
    slots: dict[str, list[int]] = {}
    for j, w in enumerate(r):
        slots.setdefault(w, []).append(j)
    used: Counter = Counter()
    pairs = []
    for i, w in enumerate(c):
        pos = slots.get(w)
        if pos and used[w] < len(pos):
            pairs.append((i, pos[used[w]]))
            used[w] += 1
    return pairs


def meteor_pair(c: Tokens, r: Tokens, alpha: float = 0.9, beta: float = 3.0, gamma: float = 0.5) -> float:
    pairs = align_exact(c, r)
    m = len(pairs)
    if m == 0:
        return 0.0
    p, rec = m / len(c), m / len(r)
    f_mean = p * rec / (alpha * p + (1 - alpha) * rec)  # = 10PR / (R + 9P)
    chunks = 1 + sum(1 for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]) if not (i1 == i0 + 1 and j1 == j0 + 1))
    penalty = gamma * (chunks / m) ** beta
    return f_mean * (1 - penalty)


def meteor_lite(candidates, references) -> float:
    cands, refs = _check(candidates, references)
    return sum(meteor_pair(c, r) for c, r in zip(cands, refs)) / len(cands)


def ce_metrics(pred_labels, gold_labels) -> tuple[float, float, float]:
    """Micro-averaged precision / recall / F1 over all (sample, label) pairs."""
    if len(pred_labels) != len(gold_labels):
        raise ValueError(f"{len(pred_labels)} predicted vs {len(gold_labels)} gold label vectors")
    tp = fp = fn = 0
    for p, g in zip(pred_labels, gold_labels):
        if len(p) != len(g):
            raise ValueError("label vectors differ in length")
        for a, b in zip(p, g):
            tp += a and b
            fp += a and not b
            fn += b and not a
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return float(prec), float(rec), float(f1)


@dataclass
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    meteor: float
    rouge_l: float
    ce_precision: float | None = None
    ce_recall: float | None = None
    ce_f1: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.ce_precision is None:
            for k in ("ce_precision", "ce_recall", "ce_f1"):
                d.pop(k)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def tsv_line(self) -> str:
        d = self.to_dict()
        return "\t".join(f"{k}={d[k]:.6f}" for k in d)


def evaluate(candidates, references, pred_labels=None, gold_labels=None) -> MetricReport:
    cands, refs = _check(candidates, references)
    rep = MetricReport(
        bleu1=bleu(cands, refs, 1), bleu2=bleu(cands, refs, 2), bleu3=bleu(cands, refs, 3),
        bleu4=bleu(cands, refs, 4), meteor=meteor_lite(cands, refs), rouge_l=rouge_l(cands, refs),
    )
    if pred_labels is not None and gold_labels is not None:
        rep.ce_precision, rep.ce_recall, rep.ce_f1 = ce_metrics(pred_labels, gold_labels)
    return rep
