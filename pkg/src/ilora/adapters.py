"""Low-rank adapters, their split into experts, and sequence-conditioned mixing.

Shapes follow the row-vector convention used everywhere in this package: an
input ``h`` has its features on the last axis and a weight ``W`` of shape
(d_out, d_in) maps it to ``h @ W.T``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .core import (DimensionError, Param, Tensor, add, as_tensor, concat, linear, mul,
                   repeat_cols, reshape, scale, softmax_rows)
from .seqrec import SequenceEmbedding


class ConfigurationError(ValueError):
    pass


@dataclass
class LoraAdapter:
    a: Param  # (r, d_in), down-projection
    b: Param  # (d_out, r), up-projection
    alpha: float
    target: str = ""

    @classmethod
    def create(cls, d_in: int, d_out: int, r: int, alpha: float, rng: np.random.Generator,
               target: str = "") -> "LoraAdapter":
        if r < 1 or r > min(d_in, d_out) / 2:
            raise ConfigurationError(f"rank {r} must satisfy 1 <= r <= min({d_in}, {d_out})/2")
        a = Param(rng.normal(0.0, 0.02, size=(r, d_in)), name=f"{target}/a")
        b = Param(np.zeros((d_out, r)), name=f"{target}/b")
        return cls(a, b, float(alpha), target)

    @property
    def r(self) -> int:
        return self.a.shape[0]

    @property
    def scaling(self) -> float:
        return self.alpha / self.r

    def params(self) -> list[Param]:
        return [self.a, self.b]


@dataclass
class ExpertBank:
    a: list[Param]  # K x (r*, d_in)
    b: list[Param]  # K x (d_out, r*)
    alpha: float
    target: str = ""

    @property
    def k_experts(self) -> int:
        return len(self.a)

    @property
    def r_star(self) -> int:
        return self.a[0].shape[0]

    @property
    def r(self) -> int:
        return self.r_star * self.k_experts

    @property
    def scaling(self) -> float:
        return self.alpha / self.r

    def params(self) -> list[Param]:
        return [p for pair in zip(self.a, self.b) for p in pair]

    def stacked(self) -> tuple[Tensor, Tensor]:
        """Full-rank views [A_1; ...; A_K] and [B_1, ..., B_K] on the tape."""
        if self.k_experts == 1:
            return self.a[0], self.b[0]
        return concat(self.a, axis=0), concat(self.b, axis=1)


@dataclass
class GatingNetwork:
    w_g: Param  # (K, d)
    temperature: float = 1.0

    @classmethod
    def create(cls, k: int, d: int, temperature: float = 1.0, name: str = "gate/w_g") -> "GatingNetwork":
        if k < 1:
            raise ConfigurationError("need at least one expert")
        return cls(Param(np.zeros((k, d)), name=name), temperature)

    @property
    def k_experts(self) -> int:
        return self.w_g.shape[0]

    def params(self) -> list[Param]:
        return [self.w_g]


def _check_proj(base: Tensor, h: Tensor, d_in: int, d_out: int) -> None:
    if base.shape != (d_out, d_in) or h.shape[-1] != d_in:
        raise DimensionError(f"incompatible shapes: W {base.shape}, adapter ({d_out}x{d_in}), h {h.shape}")


def lora_forward(base: Tensor, ad: LoraAdapter, h) -> Tensor:
    """W h + (alpha/r) B (A h), without forming B A."""
    h = as_tensor(h)
    _check_proj(base, h, ad.a.shape[1], ad.b.shape[0])
    delta = linear(linear(h, ad.a), ad.b)
    return add(linear(h, base), scale(delta, ad.scaling))


def split_experts(ad: LoraAdapter, k: int) -> ExpertBank:
    """Slice A by rows and B by columns into K pairs of rank r/K."""
    if k < 1 or ad.r % k:
        raise ConfigurationError(f"rank {ad.r} is not divisible into {k} experts")
    rs = ad.r // k
    a = [Param(ad.a.value[i * rs:(i + 1) * rs].copy(), name=f"{ad.target}/a_{i}") for i in range(k)]
    b = [Param(ad.b.value[:, i * rs:(i + 1) * rs].copy(), name=f"{ad.target}/b_{i}") for i in range(k)]
    for p in a + b:
        p.frozen = ad.a.frozen
    return ExpertBank(a, b, ad.alpha, ad.target)


def gate(g: GatingNetwork, z) -> Tensor:
    """Expert weights softmax(W_g z / T); one row per sequence embedding.

    ``z`` may be a :class:`SequenceEmbedding`, a (d,) vector, or an (n, d)
    batch. It is treated as a constant, so gradient reaches only ``W_g``.
    """
    if isinstance(z, SequenceEmbedding):
        z = z.vec
    z = np.asarray(z.value if isinstance(z, Tensor) else z, dtype=np.float64)
    z2 = z.reshape(1, -1) if z.ndim == 1 else z
    if z2.shape[-1] != g.w_g.shape[1]:
        raise DimensionError(f"embedding dim {z2.shape[-1]} != gate input dim {g.w_g.shape[1]}")
    return softmax_rows(linear(Tensor(z2), g.w_g), g.temperature)


def _expert_scale(w, bank: ExpertBank, h: Tensor) -> Tensor:
    w = as_tensor(w)
    if w.shape[-1] != bank.k_experts:
        raise DimensionError(f"{w.shape[-1]} expert weights for {bank.k_experts} experts")
    s = repeat_cols(w, bank.r_star)  # (..., r)
    if h.value.ndim == 3:
        if s.value.ndim == 1 or s.shape[0] == 1:
            return reshape(s, (1, 1, bank.r))
        if s.shape[0] != h.shape[0]:
            raise DimensionError(f"{s.shape[0]} weight rows for a batch of {h.shape[0]}")
        return reshape(s, (s.shape[0], 1, bank.r))
    if s.value.ndim == 2 and s.shape[0] == 1:
        return reshape(s, (bank.r,))
    return s


def ilora_forward(base: Tensor, bank: ExpertBank, w, h) -> Tensor:
    """W h + (alpha/r) sum_k w_k B_k (A_k h).

    ``w`` is a (K,) vector or, for a batch ``h`` of shape (B, T, d_in), one row
    of weights per instance (B, K) that stays fixed across the T tokens.
    """
    h = as_tensor(h)
    _check_proj(base, h, bank.a[0].shape[1], bank.b[0].shape[0])
    a_cat, b_cat = bank.stacked()
    u = mul(linear(h, a_cat), _expert_scale(w, bank, h))
    return add(linear(h, base), scale(linear(u, b_cat), bank.scaling))


class DeltaW:
    """Instance-wise update (alpha/r) sum_k w_k B_k A_k as an operator."""

    def __init__(self, bank: ExpertBank, w: np.ndarray):
        self.bank = bank
        self.w = np.asarray(w, dtype=np.float64).reshape(-1)

    def __call__(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=np.float64)
        out = 0.0
        for wk, a, b in zip(self.w, self.bank.a, self.bank.b):
            out = out + wk * ((h @ a.value.T) @ b.value.T)
        return self.bank.scaling * out

    def dense(self) -> np.ndarray:
        total = sum(wk * (b.value @ a.value) for wk, a, b in zip(self.w, self.bank.a, self.bank.b))
        return self.bank.scaling * total


def aggregate_delta(bank: ExpertBank, w) -> DeltaW:
    w = np.asarray(w.value if isinstance(w, Tensor) else w, dtype=np.float64).reshape(-1)
    if w.size != bank.k_experts:
        raise DimensionError(f"{w.size} expert weights for {bank.k_experts} experts")
    return DeltaW(bank, w)


# ----------------------------------------------------------------------------
# parameter accounting


@dataclass(frozen=True)
class AdapterShapeConfig:
    n_layers: int = 4
    d_model: int = 256
    d_ff: int = 1024
    targets: tuple[str, ...] = ("q", "v")
    r: int = 8
    k_experts: int = 4
    sr_dim: int = 64
    projector: str = "linear"
    gate_sharing: str = "shared"


def target_dims(name: str, d_model: int, d_ff: int) -> tuple[int, int]:
    """(d_in, d_out) of an adaptable projection inside a block."""
    if name in ("q", "k", "v", "o"):
        return d_model, d_model
    if name == "up":
        return d_model, d_ff
    if name == "down":
        return d_ff, d_model
    raise ConfigurationError(f"unknown adaptable matrix {name!r}")


def projector_params(kind: str, sr_dim: int, d_model: int) -> int:
    if kind == "linear":
        return d_model * sr_dim
    if kind == "mlp":
        return d_model * sr_dim + d_model * d_model
    raise ConfigurationError(f"unknown projector kind {kind!r}")


@dataclass(frozen=True)
class ParamCount:
    adapter: int
    projector: int
    gate: int
    total: int
    relative_increase: float
    adapter_relative_increase: float


def count_trainable(variant: str, cfg: AdapterShapeConfig = AdapterShapeConfig()) -> ParamCount:
    """Trainable parameter counts for ``uniform-lora`` or ``ilora``.

    ``relative_increase`` is the gate size over the uniform-LoRA total
    (adapters plus projector); ``adapter_relative_increase`` divides by the
    adapter entries alone.
    """
    if variant not in ("uniform-lora", "ilora"):
        raise ConfigurationError(f"unknown variant {variant!r}")
    adapter = 0
    for t in cfg.targets:
        d_in, d_out = target_dims(t, cfg.d_model, cfg.d_ff)
        adapter += cfg.n_layers * cfg.r * (d_in + d_out)
    proj = projector_params(cfg.projector, cfg.sr_dim, cfg.d_model)
    n_gates = 1 if cfg.gate_sharing == "shared" else cfg.n_layers
    gate_size = n_gates * cfg.k_experts * cfg.sr_dim
    gate_params = gate_size if variant == "ilora" else 0
    base = adapter + proj
    return ParamCount(adapter=adapter, projector=proj, gate=gate_params,
                      total=base + gate_params,
                      relative_increase=gate_size / base,
                      adapter_relative_increase=gate_size / adapter)
