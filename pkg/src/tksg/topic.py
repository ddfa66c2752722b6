"""Topic guidance: 14 disease probabilities from pooled visual features,
aggregated into a single d_h topic vector."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .corpus import N_TOPICS
from .nn import Linear, Module
from .tensor import Tensor


class TopicDetector(Module):
    """p = sigmoid(x W + b) over the 14 topic labels."""

    def __init__(self, d_h: int, rng: np.random.Generator, n_topics: int = N_TOPICS):
        self.linear = Linear(d_h, n_topics, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return T.sigmoid(self.linear(x))


class TopicAggregator(Module):
    """Plain linear layer 14 -> d_h (no activation, no normalisation)."""

    def __init__(self, d_h: int, rng: np.random.Generator, n_topics: int = N_TOPICS):
        self.linear = Linear(n_topics, d_h, rng)

    def __call__(self, p: Tensor) -> Tensor:
        return self.linear(p)


def detect_topics(detector: TopicDetector, x: Tensor) -> Tensor:
    return detector(x)


def aggregate_topic_vector(aggregator: TopicAggregator, p: Tensor) -> Tensor:
    if p.shape[-1] != N_TOPICS:
        raise ValueError(f"expected {N_TOPICS} topic probabilities, got {p.shape[-1]}")
    return aggregator(p)


def topic_loss(p: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy over the topic labels (and batch)."""
    return T.binary_cross_entropy(p, labels)
