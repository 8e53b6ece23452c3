"""Central-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .ops import NonFiniteError


def numeric_grad(f: Callable[[], float], p: np.ndarray, index, eps: float) -> float:
    old = p[index]
    p[index] = old + eps
    fp = f()
    p[index] = old - eps
    fm = f()
    p[index] = old
    if not (np.isfinite(fp) and np.isfinite(fm)):
        raise NonFiniteError("loss became non-finite under perturbation")
    return (fp - fm) / (2 * eps)


def gradient_check(f: Callable[[], float], params: dict, analytic: dict,
                   eps: float = 1e-5, seed: int = 0, max_entries: int | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` evaluates the scalar loss reading ``params`` in place; each entry is
    perturbed and restored.  With ``max_entries`` a seeded random subset of
    each tensor is probed instead of every entry.

    The relative error of an entry is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"gradient checks need float64, {name} is {p.dtype}")
        a = analytic[name]
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"analytic gradient of {name} is non-finite")
        flat = np.arange(p.size)
        if max_entries is not None and p.size > max_entries:
            flat = np.sort(rng.choice(p.size, size=max_entries, replace=False))
        for i in flat:
            idx = np.unravel_index(i, p.shape)
            n = numeric_grad(f, p, idx, eps)
            an = float(a[idx])
            err = abs(an - n) / max(abs(an), abs(n), 1e-8)
            worst = max(worst, err)
    return worst


def check_module(module, x: np.ndarray, seed: int = 0, eps: float = 1e-5,
                 max_entries: int | None = None, check_input: bool = True) -> float:
    """Gradient-check a layer under the loss ``sum(forward(x) * R)``."""
    rng = np.random.default_rng(seed + 1)
    out = module.forward(x)
    r = rng.standard_normal(out.shape)
    module.zero_grad()
    dx = module.backward(r)

    def f():
        return float(np.sum(module.forward(x) * r))

    params = module.param_dict()
    analytic = {k: v.copy() for k, v in module.grad_dict().items()}
    if check_input:
        params = dict(params, __input__=x)
        analytic["__input__"] = dx
    return gradient_check(f, params, analytic, eps=eps, seed=seed, max_entries=max_entries)
