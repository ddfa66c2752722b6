"""Small module system on top of :mod:`tksg.tensor`."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    training = True

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(key + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for k, p in params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype).copy()


def _uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return T.parameter(rng.uniform(-bound, bound, size=shape))


def zeros(*shape) -> Tensor:
    return T.parameter(np.zeros(shape))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, zero_init: bool = False):
        self.weight = T.parameter(np.zeros((d_in, d_out))) if zero_init else _uniform(rng, d_in, d_out, (d_in, d_out))
        self.bias = zeros(d_out) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = T.parameter(np.ones(d))
        self.beta = zeros(d)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator, scale: float = 0.02):
        self.weight = T.parameter(rng.normal(0.0, scale, size=(n, d)))

    def __call__(self, idx) -> Tensor:
        return T.embedding_lookup(self.weight, idx)


def causal_mask(t: int) -> np.ndarray:
    """Boolean (t, t) mask, True where a query may NOT attend (future keys)."""
    return np.triu(np.ones((t, t), dtype=bool), k=1)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with learned Q/K/V/output projections.

    Scores are scaled by the per-head width.  Inputs are (B, T, d); a 2-D input
    is treated as a batch of one.  When ``record`` is a list, the attention
    weights of every call are appended to it (for instrumentation).
    """

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator):
        if d % n_heads:
            raise ValueError(f"d_h={d} not divisible by n_heads={n_heads}")
        self.d, self.n_heads, self.d_head = d, n_heads, d // n_heads
        self.q_proj = Linear(d, d, rng)
        self.k_proj = Linear(d, d, rng)
        self.v_proj = Linear(d, d, rng)
        self.out_proj = Linear(d, d, rng)
        self.record: list | None = None

    def _split(self, x: Tensor) -> Tensor:
        B, L, _ = x.shape
        return T.transpose(T.reshape(x, (B, L, self.n_heads, self.d_head)), (0, 2, 1, 3))

    def __call__(self, query: Tensor, memory: Tensor, mask: np.ndarray | None = None) -> Tensor:
        squeeze = query.ndim == 2
        if squeeze:
            query = T.reshape(query, (1,) + query.shape)
            memory = T.reshape(memory, (1,) + memory.shape)
        if memory.shape[-1] != self.d or query.shape[-1] != self.d:
            raise ValueError(f"attention width mismatch: {query.shape} / {memory.shape}, d={self.d}")
        B, Lq, _ = query.shape
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(memory))
        v = self._split(self.v_proj(memory))
        scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(self.d_head))
        if mask is not None:
            scores = T.masked_fill(scores, mask)
        weights = T.softmax(scores, axis=-1)
        if self.record is not None:
            self.record.append(weights.data.copy())
        ctx = T.matmul(weights, v)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, Lq, self.d))
        out = self.out_proj(ctx)
        return T.reshape(out, out.shape[1:]) if squeeze else out


class FeedForward(Module):
    def __init__(self, d: int, d_ff: int, rng: np.random.Generator):
        self.fc1 = Linear(d, d_ff, rng)
        self.fc2 = Linear(d_ff, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))
