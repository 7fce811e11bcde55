"""Small decoder-only LM whose weights stay frozen once pretrained."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..core import (Param, Tensor, add, gelu, layer_norm, linear, make_rng, scatter_rows,
                    take_rows)
from ..core.rng import STREAM_LM
from ..nn import AdaptFn, Block, attention_mask
from ..seqrec import SeqRecModel
from .vocab import BEH_MARKER, Vocab

IGNORE = -1


class ContextOverflowError(ValueError):
    pass


@dataclass
class LMConfig:
    d_model: int = 256
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 1024
    context: int = 512


class ToyLM:
    def __init__(self, vocab_size: int, cfg: LMConfig = LMConfig(), seed: int = 0):
        self.cfg = cfg
        self.vocab_size = vocab_size
        rng = make_rng(seed, STREAM_LM)
        d = cfg.d_model
        self.tok_emb = Param(rng.normal(0.0, 0.02, size=(vocab_size, d)), name="tok_emb")
        self.pos_emb = Param(rng.normal(0.0, 0.01, size=(cfg.context, d)), name="pos_emb")
        self.blocks = [Block(d, cfg.n_heads, cfg.d_ff, rng, f"block{i}") for i in range(cfg.n_layers)]
        self.lnf_g = Param(np.ones(d), name="lnf_g")
        self.lnf_b = Param(np.zeros(d), name="lnf_b")

    def params(self) -> list[Param]:
        out = [self.tok_emb, self.pos_emb]
        for b in self.blocks:
            out += b.params()
        return out + [self.lnf_g, self.lnf_b]

    def freeze(self) -> None:
        for p in self.params():
            p.frozen = True

    def unfreeze(self) -> None:
        for p in self.params():
            p.frozen = False

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.params():
            h.update(p.value.tobytes())
        return h.hexdigest()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {f"lm/{p.name}": p.value for p in self.params()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.params():
            p.value[...] = state[f"lm/{p.name}"].reshape(p.value.shape)

    def forward(self, x: Tensor, positions: np.ndarray, key_valid: np.ndarray,
                adapt: AdaptFn | None = None) -> Tensor:
        """Logits for already-embedded inputs ``x`` of shape (B, T, d_model)."""
        if positions.max(initial=0) >= self.cfg.context:
            raise ContextOverflowError(f"position {positions.max()} beyond context {self.cfg.context}")
        h = add(x, take_rows(self.pos_emb, positions))
        allowed = attention_mask(key_valid)
        for i, blk in enumerate(self.blocks):
            h = blk.forward(h, allowed, adapt, layer=i)
        h = layer_norm(h, self.lnf_g, self.lnf_b)
        return linear(h, self.tok_emb)


class BehaviorProjector:
    """Maps recommender item embeddings (d) into the LM's token space (d_model)."""

    def __init__(self, d_model: int, d: int, rng: np.random.Generator, kind: str = "linear"):
        self.kind = kind
        self.proj = Param(rng.normal(0.0, 0.02, size=(d_model, d)), name="proj")
        self.hidden = None
        if kind == "mlp":
            self.hidden = Param(rng.normal(0.0, 0.02, size=(d_model, d_model)), name="proj_out")
        elif kind != "linear":
            raise ValueError(f"unknown projector kind {kind!r}")

    def params(self) -> list[Param]:
        return [self.proj] + ([self.hidden] if self.hidden is not None else [])

    def __call__(self, z) -> Tensor:
        out = linear(z if isinstance(z, Tensor) else Tensor(z), self.proj)
        if self.hidden is not None:
            out = linear(gelu(out), self.hidden)
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {f"projector/{p.name}": p.value for p in self.params()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.params():
            p.value[...] = state[f"projector/{p.name}"].reshape(p.value.shape)


@dataclass
class InstructionPair:
    user: int
    items: list[int]
    candidates: list[int]
    truth: int
    prompt_text: str
    target_text: str
    prompt_ids: list[int] = field(default_factory=list, repr=False)
    behavior_items: list[int] = field(default_factory=list, repr=False)
    target_ids: list[int] = field(default_factory=list, repr=False)
    z: np.ndarray | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {"user": self.user, "items": list(self.items), "candidates": list(self.candidates),
                "truth": self.truth, "prompt_text": self.prompt_text, "target_text": self.target_text}


@dataclass
class HybridTokenSequence:
    embedding: Tensor  # (T, d_model)
    origins: list[tuple[str, int]]  # ("text", token id) or ("behavior", item id)


def embed_hybrid(lm: ToyLM, projector: BehaviorProjector, sr: SeqRecModel, vocab: Vocab,
                 prompt_text: str, behavior_items: list[int]) -> HybridTokenSequence:
    """Token embeddings for the text with one projected behavior embedding per slot."""
    ids = [vocab.bos_id] + vocab.encode_prompt(prompt_text)
    slots = [i for i, t in enumerate(ids) if t == vocab.beh_id]
    if len(slots) != len(behavior_items):
        raise ValueError(f"{len(slots)} behavior slots but {len(behavior_items)} items")
    if len(ids) > lm.cfg.context:
        raise ContextOverflowError(f"prompt of {len(ids)} tokens exceeds context {lm.cfg.context}")
    emb = take_rows(lm.tok_emb, np.array(ids))
    if slots:
        beh = projector(sr.item_emb.value[np.array(behavior_items)])
        emb = scatter_rows(emb, (np.array(slots),), beh)
    origins = [("text", t) for t in ids]
    for s, item in zip(slots, behavior_items):
        origins[s] = ("behavior", item)
    return HybridTokenSequence(emb, origins)
