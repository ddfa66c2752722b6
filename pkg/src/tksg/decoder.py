"""Report generator: topic-fused input embeddings, pre-norm transformer decoder
with semantic-guided attention over [X; E], and the vocabulary head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention, causal_mask
from .tensor import Tensor


@dataclass
class DecoderConfig:
    vocab_size: int
    d_h: int = 64
    n_layers: int = 3
    n_heads: int = 8
    d_ff: int | None = None
    t_max: int = 60
    beam: int = 3
    dropout: float = 0.1
    sg_layers: tuple[int, ...] | None = None  # None = every layer

    def __post_init__(self):
        if self.d_h % self.n_heads:
            raise ValueError(f"d_h={self.d_h} not divisible by n_heads={self.n_heads}")
        if self.beam < 1:
            raise ValueError("beam must be >= 1")
        if self.vocab_size < 5:
            raise ValueError("vocabulary needs at least 5 entries")


def sg_attention(attn: MultiHeadAttention, query: Tensor, x: Tensor, e: Tensor | None) -> Tensor:
    """Attention whose keys and values are the rows of [X; E]."""
    memory = x if e is None or e.shape[-2] == 0 else T.concat_rows(x, e)
    return attn(query, memory)


class DecoderLayer(Module):
    def __init__(self, d: int, n_heads: int, d_ff: int, rng: np.random.Generator):
        self.norm_self = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, n_heads, rng)
        self.norm_cross = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, n_heads, rng)
        self.norm_ff = LayerNorm(d)
        self.ffn = FeedForward(d, d_ff, rng)

    def __call__(self, h: Tensor, memory: Tensor, mask: np.ndarray, rate: float, rng) -> Tensor:
        a = self.norm_self(h)
        h = h + T.dropout(self.self_attn(a, a, mask), rate, rng)
        h = h + T.dropout(self.cross_attn(self.norm_cross(h), memory), rate, rng)
        return h + T.dropout(self.ffn(self.norm_ff(h)), rate, rng)


class ReportDecoder(Module):
    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.d_h
        self.word = T.parameter(rng.normal(0.0, 0.02, size=(cfg.vocab_size, d)))
        self.pos = T.parameter(rng.normal(0.0, 0.02, size=(cfg.t_max, d)))
        self.embed_norm = LayerNorm(d)
        self.layers = [DecoderLayer(d, cfg.n_heads, cfg.d_ff or 4 * d, rng) for _ in range(cfg.n_layers)]
        self.final_norm = LayerNorm(d)
        # zero-initialised head: the untrained model predicts the uniform distribution
        self.head = Linear(d, cfg.vocab_size, rng, bias=False, zero_init=True)
        self.topic_trace: list | None = None
        self.dropout_rng: np.random.Generator | None = None

    @property
    def _rate(self) -> float:
        return self.cfg.dropout if self.training and self.dropout_rng is not None else 0.0

    def input_embedding(self, prev_ids, topic: Tensor | None = None) -> Tensor:
        """e_t = LN(W_word[y_{t-1}] + W_pos[t] + l) for a (B, t) block of previous tokens.

        ``topic`` is a (B, d_h) vector added at every position, or None.
        """
        prev_ids = np.asarray(prev_ids, dtype=np.int64)
        if prev_ids.ndim == 1:
            prev_ids = prev_ids[None]
        t = prev_ids.shape[1]
        if t > self.cfg.t_max:
            raise ValueError(f"position {t - 1} exceeds T_max={self.cfg.t_max}")
        x = T.embedding_lookup(self.word, prev_ids) + T.embedding_lookup(self.pos, np.arange(t))
        if topic is not None:
            if self.topic_trace is not None:
                self.topic_trace.append(topic.data.copy())
            x = x + T.reshape(topic, (topic.shape[0], 1, topic.shape[-1]))
        return self.embed_norm(x)

    def memory_for_layer(self, i: int, x: Tensor, e: Tensor | None) -> Tensor:
        use_sg = self.cfg.sg_layers is None or i in self.cfg.sg_layers
        if e is None or e.shape[-2] == 0 or not use_sg:
            return x
        return T.concat_rows(x, e)

    def forward(self, emb: Tensor, x: Tensor, e: Tensor | None) -> Tensor:
        """(B, t, d_h) input embeddings -> (B, t, d_h) hidden states."""
        rate, rng = self._rate, self.dropout_rng
        h = T.dropout(emb, rate, rng)
        mask = causal_mask(emb.shape[1])
        memories = {}
        for i, layer in enumerate(self.layers):
            key = self.cfg.sg_layers is None or i in self.cfg.sg_layers
            if key not in memories:
                memories[key] = self.memory_for_layer(i, x, e)
            h = layer(h, memories[key], mask, rate, rng)
        return self.final_norm(h)

    def logits(self, h: Tensor) -> Tensor:
        return self.head(h)

    def predict_token(self, h: Tensor) -> Tensor:
        return T.softmax(self.logits(h), axis=-1)

    def attention_modules(self):
        for layer in self.layers:
            yield layer.self_attn
            yield layer.cross_attn


def report_loss(logits: Tensor, targets, pad_id: int = 0) -> Tensor:
    """Mean token NLL over non-pad positions (EOS included), averaged over the batch."""
    return T.sequence_nll(logits, targets, pad_id)


def total_loss(l_rep: Tensor, l_kd: Tensor | None = None, l_td: Tensor | None = None) -> Tensor:
    """Unweighted sum; a gated-off term is passed as None."""
    out = l_rep
    for term in (l_kd, l_td):
        if term is not None:
            out = out + term
    return out
