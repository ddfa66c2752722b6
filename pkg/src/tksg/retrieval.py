"""Image-to-report retrieval over precomputed embeddings.

Report embeddings are L2-normalised once at build time; a query is ranked by
cosine similarity with an exhaustive scan.  Ties go to the lower row index.
"""

from __future__ import annotations

import hashlib
import os
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear, Module
from .tensor import Tensor
from .tensorio import load_tensor, save_tensor


class RetrievalIndex:
    """Immutable store of M unit-norm report embeddings and their ids."""

    def __init__(self, embeddings: np.ndarray, ids: Sequence[str]):
        emb = np.array(embeddings, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[0] < 1:
            raise ValueError("index needs a non-empty M x d_e embedding matrix")
        if len(ids) != emb.shape[0]:
            raise ValueError(f"{len(ids)} ids for {emb.shape[0]} embeddings")
        ids = [str(i) for i in ids]
        seen = set()
        for i in ids:
            if i in seen:
                raise ValueError(f"duplicate id {i!r}")
            seen.add(i)
        norms = np.linalg.norm(emb, axis=1)
        if (norms == 0).any():
            raise ValueError(f"zero-norm embedding at rows {np.flatnonzero(norms == 0).tolist()}")
        emb = emb / norms[:, None]
        emb.flags.writeable = False
        self._emb = emb
        self._ids = tuple(ids)
        self._row = {i: n for n, i in enumerate(ids)}

    @property
    def embeddings(self) -> np.ndarray:
        return self._emb

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def dim(self) -> int:
        return self._emb.shape[1]

    def __len__(self) -> int:
        return self._emb.shape[0]

    def row_of(self, id_: str) -> int:
        return self._row[id_]

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        save_tensor(os.path.join(directory, "embeddings.tksg"), self._emb)
        with open(os.path.join(directory, "ids.txt"), "w", encoding="utf-8") as fh:
            fh.write("".join(f"{i}\n" for i in self._ids))

    @classmethod
    def load(cls, directory) -> "RetrievalIndex":
        emb = load_tensor(os.path.join(directory, "embeddings.tksg"))
        return cls(emb, read_ids(os.path.join(directory, "ids.txt")))


def read_ids(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.rstrip("\n")]


def write_ids(path, ids: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("".join(f"{i}\n" for i in ids))


def build_index(embeddings, ids) -> RetrievalIndex:
    return RetrievalIndex(embeddings, ids)


@dataclass(frozen=True)
class RetrievedSet:
    ids: tuple[str, ...]
    sims: tuple[float, ...]
    rows: tuple[int, ...]
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.ids)


def query_topk(index: RetrievalIndex, query, k: int, exclude: Iterable[str] = ()) -> RetrievedSet:
    """Exact top-k by cosine similarity; rows listed in ``exclude`` are skipped.

    Returns fewer than k results (``truncated=True``) when the index is smaller.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.dim:
        raise ValueError(f"query dim {q.shape[0]} != index dim {index.dim}")
    qn = np.linalg.norm(q)
    if qn == 0:
        raise ValueError("zero query vector")
    sims = index.embeddings @ (q / qn)
    order = np.argsort(-sims, kind="stable")
    excluded = {index.row_of(i) for i in exclude if i in index._row}
    if excluded:
        order = order[~np.isin(order, list(excluded))]
    available = len(order)
    top = order[:k]
    return RetrievedSet(
        ids=tuple(index.ids[r] for r in top),
        sims=tuple(float(sims[r]) for r in top),
        rows=tuple(int(r) for r in top),
        truncated=available < k,
    )


class ReportProjector(Module):
    """Trainable d_e -> d_h bridge (linear + LayerNorm) for retrieved report embeddings."""

    def __init__(self, d_e: int, d_h: int, rng: np.random.Generator):
        self.d_e = d_e
        self.linear = Linear(d_e, d_h, rng)
        self.norm = LayerNorm(d_h)

    def __call__(self, raw) -> Tensor:
        raw = raw if isinstance(raw, Tensor) else Tensor(raw)
        if raw.shape[-1] != self.d_e:
            raise ValueError(f"report embedding width {raw.shape[-1]} != d_e={self.d_e}")
        return self.norm(self.linear(raw))


def project_reports(projector: ReportProjector, raw) -> Tensor:
    return projector(raw)


class HashEmbedder:
    """Deterministic bag-of-tokens pseudo-embedder.

    Each token maps to a fixed Gaussian vector seeded from a BLAKE2 hash of the
    token; a text embeds to the normalised sum of its token vectors, so texts
    sharing words have high cosine similarity.
    """

    def __init__(self, dim: int = 64, salt: str = "tksg"):
        self.dim = dim
        self.salt = salt
        self._cache: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(f"{self.salt}:{token}".encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vec = rng.standard_normal(self.dim)
            self._cache[token] = vec
        return vec

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        words = [t for t in tokens if any(ch.isalnum() for ch in t)]
        if not words:
            warnings.warn("embedding a text without word tokens; returning a unit basis vector")
            out = np.zeros(self.dim)
            out[0] = 1.0
            return out
        total = np.sum([self.token_vector(t) for t in words], axis=0)
        return total / np.linalg.norm(total)
