"""Pre-LayerNorm causal transformer block shared by the recommender and the toy LM."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .core import (Param, Tensor, add, attention, gelu, layer_norm, linear, reshape,
                   transpose)

# adapt(layer, name, h, W) -> projected Tensor, or None for the plain frozen product
AdaptFn = Callable[[int, str, Tensor, Param], Optional[Tensor]]


def normal_param(rng: np.random.Generator, shape, std: float, name: str) -> Param:
    return Param(rng.normal(0.0, std, size=shape), name=name)


class Block:
    def __init__(self, d: int, n_heads: int, d_ff: int, rng: np.random.Generator,
                 prefix: str, std: float = 0.02):
        if d % n_heads:
            raise ValueError(f"model width {d} not divisible by {n_heads} heads")
        self.d, self.n_heads = d, n_heads
        self.ln1_g = Param(np.ones(d), name=f"{prefix}/ln1_g")
        self.ln1_b = Param(np.zeros(d), name=f"{prefix}/ln1_b")
        self.wq = normal_param(rng, (d, d), std, f"{prefix}/wq")
        self.wk = normal_param(rng, (d, d), std, f"{prefix}/wk")
        self.wv = normal_param(rng, (d, d), std, f"{prefix}/wv")
        self.wo = normal_param(rng, (d, d), std, f"{prefix}/wo")
        self.ln2_g = Param(np.ones(d), name=f"{prefix}/ln2_g")
        self.ln2_b = Param(np.zeros(d), name=f"{prefix}/ln2_b")
        self.w1 = normal_param(rng, (d_ff, d), std, f"{prefix}/w1")
        self.w2 = normal_param(rng, (d, d_ff), std, f"{prefix}/w2")

    def params(self) -> list[Param]:
        return [self.ln1_g, self.ln1_b, self.wq, self.wk, self.wv, self.wo,
                self.ln2_g, self.ln2_b, self.w1, self.w2]

    def _heads(self, x: Tensor) -> Tensor:
        B, T, _ = x.shape
        return transpose(reshape(x, (B, T, self.n_heads, self.d // self.n_heads)), (0, 2, 1, 3))

    def forward(self, x: Tensor, allowed: np.ndarray, adapt: AdaptFn | None = None,
                layer: int = 0) -> Tensor:
        B, T, d = x.shape
        h = layer_norm(x, self.ln1_g, self.ln1_b)

        def proj(name: str, inp: Tensor, w: Param) -> Tensor:
            if adapt is not None:
                out = adapt(layer, name, inp, w)
                if out is not None:
                    return out
            return linear(inp, w)

        q = self._heads(proj("q", h, self.wq))
        k = self._heads(proj("k", h, self.wk))
        v = self._heads(proj("v", h, self.wv))
        a = attention(q, k, v, allowed)
        a = reshape(transpose(a, (0, 2, 1, 3)), (B, T, d))
        x = add(x, proj("o", a, self.wo))
        h2 = layer_norm(x, self.ln2_g, self.ln2_b)
        up = gelu(proj("up", h2, self.w1))
        return add(x, proj("down", up, self.w2))


def attention_mask(key_valid: np.ndarray) -> np.ndarray:
    """Causal mask restricted to valid keys; every position may attend to itself.

    ``key_valid`` is a (B, T) bool array. Returns (B, 1, T, T).
    """
    B, T = key_valid.shape
    causal = np.tril(np.ones((T, T), dtype=bool))
    allowed = causal[None] & key_valid[:, None, :]
    allowed |= np.eye(T, dtype=bool)[None]
    return allowed[:, None]
