"""The full topic/keyword-guided report generation model and its variants."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .decoder import DecoderConfig, ReportDecoder, report_loss, total_loss
from .decoding import Hypothesis, beam_search, greedy_decode
from .encoder import VisualEncoder
from .keyword import KeywordDetector, KeywordEmbedder, keyword_loss, select_topk
from .nn import Module
from .retrieval import ReportProjector
from .tensor import Tensor
from .topic import TopicAggregator, TopicDetector, topic_loss

VARIANTS = {
    "BASE": (False, False),
    "TSG": (True, False),
    "KSG": (False, True),
    "TKSG": (True, True),
}


@dataclass
class ModelConfig:
    vocab_size: int
    d_h: int = 64
    n_layers: int = 3
    n_heads: int = 8
    d_ff: int | None = None
    t_max: int = 60
    dropout: float = 0.1
    sg_layers: tuple[int, ...] | None = None
    n_w: int = 100
    n_k: int = 20
    d_e: int = 64
    variant: str = "TKSG"
    visual_input: str = "features"  # or "image"
    image_size: int = 32
    patch_size: int = 8
    channels: int = 1
    d_b: int = 64
    enc_layers: int = 2
    enc_heads: int = 4

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {sorted(VARIANTS)}")
        if self.n_k > self.n_w:
            raise ValueError(f"N_K={self.n_k} exceeds N_W={self.n_w}")
        if self.visual_input not in ("features", "image"):
            raise ValueError(f"unknown visual_input {self.visual_input!r}")

    @property
    def use_topic(self) -> bool:
        return VARIANTS[self.variant][0]

    @property
    def use_keyword(self) -> bool:
        return VARIANTS[self.variant][1]


@dataclass
class Batch:
    visual: np.ndarray          # (B, N, d_h) features or (B, N, patch_dim) patches
    retrieved: np.ndarray       # (B, N_R, d_e) raw retrieved report embeddings
    topics: np.ndarray          # (B, 14)
    concepts: np.ndarray        # (B, N_W)
    inputs: np.ndarray | None = None   # (B, T) BOS-shifted gold tokens
    targets: np.ndarray | None = None  # (B, T) gold tokens incl. EOS, PAD-padded


@dataclass
class Guidance:
    x: Tensor
    topic_probs: Tensor | None = None
    topic_vector: Tensor | None = None
    keyword_probs: Tensor | None = None
    selected: np.ndarray | None = None
    keywords: Tensor | None = None


@dataclass
class Losses:
    rep: Tensor
    kd: Tensor | None = None
    td: Tensor | None = None
    all: Tensor = field(init=False)

    def __post_init__(self):
        self.all = total_loss(self.rep, self.kd, self.td)

    def values(self) -> dict[str, float]:
        f = lambda t: float(t.data) if t is not None else float("nan")
        return {"all": f(self.all), "rep": f(self.rep), "kd": f(self.kd), "td": f(self.td)}


class TKSGModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d = cfg.d_h
        self.encoder = None
        if cfg.visual_input == "image":
            self.encoder = VisualEncoder(cfg.image_size, cfg.patch_size, cfg.channels, cfg.d_b, d,
                                         cfg.enc_layers, cfg.enc_heads, rng)
        self.topic_detector = TopicDetector(d, rng)
        self.topic_fc = TopicAggregator(d, rng)
        self.projector = ReportProjector(cfg.d_e, d, rng)
        self.keyword_detector = KeywordDetector(d, cfg.n_w, rng)
        self.keyword_embedder = KeywordEmbedder(cfg.n_w, cfg.n_k, d, rng)
        self.decoder = ReportDecoder(DecoderConfig(cfg.vocab_size, d, cfg.n_layers, cfg.n_heads, cfg.d_ff,
                                                   cfg.t_max, 1, cfg.dropout, cfg.sg_layers), rng)

    # --- parameter groups ---------------------------------------------------
    def topic_parameters(self) -> list[Tensor]:
        return self.topic_detector.parameters() + self.topic_fc.parameters()

    def keyword_parameters(self) -> list[Tensor]:
        return (self.projector.parameters() + self.keyword_detector.parameters()
                + self.keyword_embedder.parameters())

    def encoder_parameters(self) -> list[Tensor]:
        return self.encoder.parameters() if self.encoder is not None else []

    def active_parameter_groups(self) -> dict[str, list[Tensor]]:
        """'encoder' and 'rest' groups holding only the parameters the variant trains."""
        rest = self.decoder.parameters()
        if self.cfg.use_topic:
            rest = self.topic_parameters() + rest
        if self.cfg.use_keyword:
            rest = rest + self.keyword_parameters()
        return {"encoder": self.encoder_parameters(), "rest": rest}

    # --- forward pieces -----------------------------------------------------
    def visual_features(self, visual) -> Tensor:
        if self.encoder is None:
            x = T.as_tensor(visual)
            if x.shape[-1] != self.cfg.d_h:
                raise ValueError(f"precomputed features have width {x.shape[-1]}, expected d_h={self.cfg.d_h}")
            return x
        return self.encoder(visual)

    def guidance(self, visual, retrieved, selected: np.ndarray | None = None) -> Guidance:
        """Compute X, and (per variant) the topic vector and keyword embeddings.

        ``selected`` overrides the top-k keyword choice (used for gradient checks).
        """
        x = self.visual_features(visual)
        g = Guidance(x=x)
        pooled = T.mean_pool(x)
        if self.cfg.use_topic:
            g.topic_probs = self.topic_detector(pooled)
            g.topic_vector = self.topic_fc(g.topic_probs)
        if self.cfg.use_keyword:
            r = self.projector(retrieved)
            fused = T.concat([pooled, T.mean_pool(r)], axis=-1)
            g.keyword_probs = self.keyword_detector(fused)
            g.selected = select_topk(g.keyword_probs.data, self.cfg.n_k) if selected is None else np.asarray(selected)
            g.keywords = self.keyword_embedder(g.selected)
        return g

    def decode_hidden(self, g: Guidance, prev_ids) -> Tensor:
        emb = self.decoder.input_embedding(prev_ids, g.topic_vector)
        return self.decoder.forward(emb, g.x, g.keywords)

    def losses(self, batch: Batch, selected: np.ndarray | None = None) -> Losses:
        g = self.guidance(batch.visual, batch.retrieved, selected)
        logits = self.decoder.logits(self.decode_hidden(g, batch.inputs))
        rep = report_loss(logits, batch.targets)
        td = topic_loss(g.topic_probs, batch.topics) if g.topic_probs is not None else None
        kd = keyword_loss(g.keyword_probs, batch.concepts) if g.keyword_probs is not None else None
        return Losses(rep=rep, kd=kd, td=td)

    # --- inference ------------------------------------------------------------
    def next_logprobs_fn(self, g: Guidance):
        """Adapter for :mod:`tksg.decoding` around one sample's guidance (batch of 1)."""
        d = self.cfg.d_h

        def fn(prefixes):
            k = len(prefixes)
            ids = np.asarray(prefixes, dtype=np.int64)
            x = T.Tensor(np.broadcast_to(g.x.data, (k,) + g.x.shape[1:]), dtype=g.x.dtype)
            e = None if g.keywords is None else T.Tensor(
                np.broadcast_to(g.keywords.data, (k,) + g.keywords.shape[1:]), dtype=g.keywords.dtype)
            l = None if g.topic_vector is None else T.Tensor(
                np.broadcast_to(g.topic_vector.data, (k, d)), dtype=g.topic_vector.dtype)
            emb = self.decoder.input_embedding(ids, l)
            h = self.decoder.forward(emb, x, e)
            last = self.decoder.logits(h).data[:, -1, :]
            return T.log_softmax(T.Tensor(last, dtype=last.dtype)).data

        return fn

    def generate(self, visual, retrieved, beam: int = 3, t_max: int | None = None,
                 greedy: bool = False) -> Hypothesis:
        """Decode one sample: visual (1, N, .) and retrieved (1, N_R, d_e)."""
        t_max = t_max or self.cfg.t_max
        was_training = self.training
        self.eval()
        try:
            with T.no_grad():
                g = self.guidance(visual, retrieved)
                fn = self.next_logprobs_fn(g)
                if greedy:
                    return greedy_decode(fn, t_max)
                return beam_search(fn, beam, t_max)
        finally:
            self.train(was_training)
