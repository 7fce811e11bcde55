from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Param, Tape, Tensor, no_tape


class EvaluationError(ArithmeticError):
    pass


def grad_check(f: Callable[[], Tensor], params: list[Param], h: float = 1e-5,
               max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between tape gradients and central differences.

    The error for an entry is |analytic - numeric| / max(1, |numeric|). With
    ``max_entries`` set, each param is checked on a random subset of entries.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
        tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    def value() -> float:
        with no_tape():
            out = float(f().value)
        if not np.isfinite(out):
            raise EvaluationError("checked function returned a non-finite value")
        return out

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        gflat = ga.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = value()
            flat[i] = orig - h
            down = value()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            err = abs(gflat[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
