"""Central finite-difference oracle, independent of the autodiff tape."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from coopdet.ndtensor import Tensor


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def check_grads(build: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
                max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Largest relative error between tape gradients and finite differences.

    ``build`` recomputes the scalar loss from the current parameter values.
    With ``max_entries`` only a random subset of each parameter is probed.
    """
    for p in params:
        p.grad = None
    build().backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        if max_entries is None or p.size <= max_entries:
            num = numeric_grad(lambda: build().item(), p.data, h)
            worst = max(worst, rel_error(analytic, num))
            continue
        rng = rng or np.random.default_rng(0)
        idx = rng.choice(p.size, size=max_entries, replace=False)
        flat = p.data.reshape(-1)
        num = np.empty(max_entries)
        for n, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            fp = build().item()
            flat[i] = old - h
            fm = build().item()
            flat[i] = old
            num[n] = (fp - fm) / (2 * h)
        worst = max(worst, rel_error(analytic.reshape(-1)[idx], num))
    return worst
