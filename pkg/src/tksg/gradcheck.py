"""Central finite-difference gradient checking for the autodiff engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


def numeric_grad(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """d f / d arr by central differences; ``arr`` is perturbed in place and restored."""
    if not arr.flags.c_contiguous:
        raise ValueError("numeric_grad needs a contiguous array (it perturbs a flat view)")
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """||a - n|| / max(||a||, ||n||, floor).

    Gradients that are identically zero (e.g. an attention key bias, which
    softmax ignores) come back from central differences as ~1e-10 rounding
    noise; the floor turns gradients with norm below it into an absolute
    comparison (at a 1e-5 tolerance, ||a - n|| <= 1e-8).
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def check_grads(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6,
                max_entries: int | None = None, rng: np.random.Generator | None = None) -> list[float]:
    """Relative error of analytic vs numeric gradient for each parameter.

    ``loss_fn`` must rebuild the graph from the current parameter values.  When
    ``max_entries`` is set, only that many randomly chosen entries per parameter
    are compared (the rest of the analytic gradient is ignored).
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    T.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    def value() -> float:
        with T.no_grad():
            return float(loss_fn().data)

    errs = []
    for p, a in zip(params, analytic):
        if max_entries is None or p.data.size <= max_entries:
            errs.append(rel_error(a, numeric_grad(value, p.data, eps)))
            continue
        rng = rng or np.random.default_rng(0)
        picks = rng.choice(p.data.size, size=max_entries, replace=False)
        flat = p.data.reshape(-1)
        num = np.empty(max_entries)
        for j, i in enumerate(picks):
            orig = flat[i]
            flat[i] = orig + eps
            hi = value()
            flat[i] = orig - eps
            lo = value()
            flat[i] = orig
            num[j] = (hi - lo) / (2 * eps)
        errs.append(rel_error(a.reshape(-1)[picks], num))
    return errs
