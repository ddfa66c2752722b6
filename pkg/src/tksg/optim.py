"""Adam with bias correction, parameter groups and per-epoch lr decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState) -> None:
    """One in-place Adam update.  A missing grad counts as zero."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ValueError("adam_step: parameter list changed size")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"adam_step: shape mismatch {g.shape} vs {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.dtype)


class Adam:
    """Parameter groups share betas/eps but keep separate learning rates.

    ``groups`` maps a group name to ``(params, lr)``.
    """

    def __init__(self, groups: dict[str, tuple[list[Tensor], float]],
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.groups = {}
        for name, (params, lr) in groups.items():
            self.groups[name] = (list(params), AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps))

    def params(self) -> list[Tensor]:
        return [p for params, _ in self.groups.values() for p in params]

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad = None

    def step(self) -> None:
        for params, state in self.groups.values():
            if params:
                adam_step(params, [p.grad for p in params], state)

    def decay(self, factor: float) -> None:
        for _, state in self.groups.values():
            state.lr *= factor

    def lrs(self) -> dict[str, float]:
        return {name: state.lr for name, (_, state) in self.groups.items()}
