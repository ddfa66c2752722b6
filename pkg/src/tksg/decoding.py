"""Greedy and beam-search decoding.

Both work against a ``next_logprobs(prefixes) -> (K, |V|) array`` callable,
where every prefix starts with BOS.  PAD and BOS are never emitted.
Hypotheses are ranked by length-normalised log-probability (sum of token
log-probs divided by the number of emitted tokens, EOS included).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import BOS, EOS, PAD

NextLogprobs = Callable[[list[list[int]]], np.ndarray]
BANNED = (PAD, BOS)


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    logprob: float
    finished: bool

    @property
    def score(self) -> float:
        return self.logprob / len(self.tokens)

    def sort_key(self):
        return (-self.score, self.tokens)


def _masked(lp: np.ndarray) -> np.ndarray:
    lp = np.array(lp, dtype=np.float64)
    lp[:, list(BANNED)] = -np.inf
    return lp


def greedy_decode(next_logprobs: NextLogprobs, t_max: int) -> Hypothesis:
    tokens: list[int] = []
    total = 0.0
    for _ in range(t_max):
        lp = _masked(next_logprobs([[BOS] + tokens]))[0]
        tok = int(np.argmax(lp))
        tokens.append(tok)
        total += float(lp[tok])
        if tok == EOS:
            break
    return Hypothesis(tuple(tokens), total, True)


def beam_search(next_logprobs: NextLogprobs, beam: int, t_max: int) -> Hypothesis:
    """Beam search in which finished hypotheses keep competing for beam slots.

    At each step the ``beam`` best entries of (kept finished hypotheses + all
    one-token extensions of the active ones) survive; decoding stops once no
    active hypothesis survives or T_max tokens have been emitted.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    active = [Hypothesis((), 0.0, False)]
    finished: list[Hypothesis] = []
    for step in range(t_max):
        lp = _masked(next_logprobs([[BOS, *h.tokens] for h in active]))
        base = np.array([h.logprob for h in active])
        cand = base[:, None] + lp
        flat = cand.reshape(-1)
        order = np.argsort(-flat, kind="stable")
        V = lp.shape[1]
        fresh: list[Hypothesis] = []
        for idx in order:
            if len(fresh) == beam or not np.isfinite(flat[idx]):
                break
            k, v = divmod(int(idx), V)
            toks = active[k].tokens + (v,)
            fresh.append(Hypothesis(toks, float(flat[idx]), v == EOS or len(toks) == t_max))
        pool = sorted(finished + fresh, key=Hypothesis.sort_key)[:beam]
        finished = [h for h in pool if h.finished]
        active = [h for h in pool if not h.finished]
        if not active:
            break
    return min(finished, key=Hypothesis.sort_key)


def enumerate_best(next_logprobs: NextLogprobs, vocab_size: int, t_max: int) -> Hypothesis:
    """Exhaustive search over every emit-able sequence (small vocabularies only)."""
    allowed = [v for v in range(vocab_size) if v not in BANNED]
    best: Hypothesis | None = None
    frontier = [((), 0.0)]
    for step in range(t_max):
        nxt = []
        lp = _masked(next_logprobs([[BOS, *toks] for toks, _ in frontier]))
        for (toks, total), row in zip(frontier, lp):
            for v in allowed:
                h = Hypothesis(toks + (v,), total + float(row[v]), True)
                if v == EOS or len(h.tokens) == t_max:
                    if best is None or h.sort_key() < best.sort_key():
                        best = h
                else:
                    nxt.append((h.tokens, h.logprob))
        frontier = nxt
        if not frontier:
            break
    return best


def table_model(table: np.ndarray) -> NextLogprobs:
    """Wrap a position-indexed (T, V) or context-free (V,) log-prob table as a decoder.

    Positions past the last table row reuse that row.
    """
    table = np.asarray(table, dtype=np.float64)

    def fn(prefixes: Sequence[Sequence[int]]) -> np.ndarray:
        rows = []
        for p in prefixes:
            rows.append(table if table.ndim == 1 else table[min(len(p) - 1, len(table) - 1)])
        return np.stack(rows)

    return fn
