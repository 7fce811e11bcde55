"""Adam with decoupled weight decay and a warmup + cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Param


class ConsistencyError(RuntimeError):
    pass


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_params(cls, params: list[Param], **hyper) -> "AdamState":
        return cls(m=[np.zeros_like(p.value) for p in params],
                   v=[np.zeros_like(p.value) for p in params], **hyper)


def adam_step(params: list[Param], state: AdamState, lr: float) -> list[Param]:
    """One bias-corrected AdamW update in place; zeroes every grad afterwards."""
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    if len(params) != len(state.m):
        raise ConsistencyError(f"{len(params)} params but optimizer state tracks {len(state.m)}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, m, v in zip(params, state.m, state.v):
        if m.shape != p.value.shape or v.shape != p.value.shape:
            raise ConsistencyError(f"param {p.name!r} has shape {p.value.shape}, moments {m.shape}")
        if p.frozen:
            p.zero_grad()
            continue
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p.value -= lr * state.weight_decay * p.value
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.zero_grad()
    return params


@dataclass(frozen=True)
class LrSchedule:
    max_lr: float
    warmup_steps: int
    total_steps: int
    floor_lr: float = 0.0

    def __post_init__(self):
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("need 0 <= warmup_steps <= total_steps")
        if self.floor_lr > self.max_lr:
            raise ValueError("floor_lr must not exceed max_lr")


def lr_at(s: LrSchedule, step: int) -> float:
    """Linear warmup from 0 to ``max_lr``, then cosine decay to ``floor_lr``."""
    if step < s.warmup_steps:
        return s.max_lr * step / s.warmup_steps
    span = s.total_steps - s.warmup_steps
    if span == 0:
        return s.max_lr if step == s.warmup_steps else s.floor_lr
    progress = min(1.0, (step - s.warmup_steps) / span)
    return s.floor_lr + (s.max_lr - s.floor_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))
