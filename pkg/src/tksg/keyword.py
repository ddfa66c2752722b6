"""Keyword guidance: concept vocabulary, concept detector, top-k selection and
keyword embeddings with rank embeddings."""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear, Module
from .tensor import Tensor


def load_stopwords(path=None) -> frozenset[str]:
    if path is None:
        text = resources.files("tksg").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return frozenset(w.strip() for w in text.splitlines() if w.strip() and not w.startswith("#"))


@dataclass(frozen=True)
class ConceptVocabulary:
    concepts: tuple[str, ...]
    counts: tuple[int, ...]
    stopwords: frozenset[str] = field(default_factory=frozenset, compare=False)

    def __len__(self) -> int:
        return len(self.concepts)

    def index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.concepts)}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("".join(f"{c}\t{n}\n" for c, n in zip(self.concepts, self.counts)))

    @classmethod
    def load(cls, path, stopwords: frozenset[str] = frozenset()) -> "ConceptVocabulary":
        concepts, counts = [], []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    c, n = line.rstrip("\n").split("\t")
                    concepts.append(c)
                    counts.append(int(n))
        return cls(tuple(concepts), tuple(counts), stopwords)


def build_concepts(reports: Iterable[Sequence[str]], n_w: int, stopwords: Iterable[str] = ()) -> ConceptVocabulary:
    """The n_w most frequent non-stop-word tokens (alphabetic only); ties broken lexicographically."""
    stop = frozenset(stopwords)
    counter: Counter = Counter()
    n_reports = 0
    for toks in reports:
        n_reports += 1
        counter.update(t for t in toks if t.isalpha() and t not in stop)
    if n_reports == 0:
        raise ValueError("cannot build concepts from an empty corpus")
    if len(counter) < n_w:
        raise ValueError(f"only {len(counter)} distinct concept candidates, need N_W={n_w}")
    ranked = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[:n_w]
    return ConceptVocabulary(tuple(c for c, _ in ranked), tuple(n for _, n in ranked), stop)


def label_keywords(tokens: Sequence[str], vocab: ConceptVocabulary) -> np.ndarray:
    present = set(tokens)
    return np.array([1.0 if c in present else 0.0 for c in vocab.concepts])


class KeywordDetector(Module):
    """P_W = sigmoid([f(X); f(R)] W + b) over the N_W concepts."""

    def __init__(self, d_h: int, n_w: int, rng: np.random.Generator):
        self.d_in = 2 * d_h
        self.linear = Linear(2 * d_h, n_w, rng)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ValueError(f"keyword detector expects width {self.d_in}, got {x.shape[-1]}")
        return T.sigmoid(self.linear(x))


def detect_keywords(detector: KeywordDetector, x: Tensor) -> Tensor:
    return detector(x)


def keyword_loss(p: Tensor, labels) -> Tensor:
    return T.binary_cross_entropy(p, labels)


def select_topk(p, n_k: int) -> np.ndarray:
    """Indices of the n_k largest probabilities, descending; ties go to the lower index.

    Works row-wise on a (B, N_W) array.
    """
    p = np.asarray(p.data if isinstance(p, Tensor) else p)
    if n_k > p.shape[-1]:
        raise ValueError(f"N_K={n_k} exceeds N_W={p.shape[-1]}")
    order = np.argsort(-p, axis=-1, kind="stable")
    return order[..., :n_k]


class KeywordEmbedder(Module):
    """E_i = LN(W_emb[s_i] + W_rank[i])."""

    def __init__(self, n_w: int, n_k: int, d_h: int, rng: np.random.Generator):
        self.n_w, self.n_k = n_w, n_k
        self.word = T.parameter(rng.normal(0.0, 0.02, size=(n_w, d_h)))
        self.rank = T.parameter(rng.normal(0.0, 0.02, size=(n_k, d_h)))
        self.norm = LayerNorm(d_h)

    def __call__(self, selected) -> Tensor:
        selected = np.asarray(selected, dtype=np.int64)
        k = selected.shape[-1]
        if k > self.n_k:
            raise ValueError(f"{k} keywords selected but only {self.n_k} rank embeddings")
        words = T.embedding_lookup(self.word, selected)
        ranks = T.embedding_lookup(self.rank, np.arange(k))
        return self.norm(words + ranks)


def embed_keywords(embedder: KeywordEmbedder, selected) -> Tensor:
    return embedder(selected)
