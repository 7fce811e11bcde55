"""SASRec-style self-attentive next-item recommender."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import (AdamState, Param, Tape, Tensor, adam_step, add, cross_entropy,
                   layer_norm, linear, make_rng, mul, no_tape, take_rows)
from .core.rng import STREAM_BATCHES, STREAM_SEQREC
from .nn import Block, attention_mask

log = logging.getLogger(__name__)

PAD = 0


class ConfigError(ValueError):
    pass


@dataclass
class InteractionSequence:
    user_id: int
    items: list[int]
    truth: int | None = None

    def full(self) -> list[int]:
        return self.items + ([self.truth] if self.truth is not None else [])


@dataclass
class SequenceEmbedding:
    vec: np.ndarray
    source_user: int


@dataclass
class SeqRecConfig:
    dim: int = 64
    n_blocks: int = 2
    n_heads: int = 2
    max_seq_len: int = 50


@dataclass
class SeqRecTrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 30
    weight_decay: float = 0.0
    seed: int = 0


class SeqRecModel:
    def __init__(self, n_items: int, cfg: SeqRecConfig = SeqRecConfig(), seed: int = 0):
        self.n_items = n_items
        self.cfg = cfg
        rng = make_rng(seed, STREAM_SEQREC)
        d = cfg.dim
        emb = rng.normal(0.0, 1.0 / np.sqrt(d), size=(n_items + 1, d))
        emb[PAD] = 0.0
        self.item_emb = Param(emb, name="item_emb")
        self.pos_emb = Param(rng.normal(0.0, 0.02, size=(cfg.max_seq_len, d)), name="pos_emb")
        self.blocks = [Block(d, cfg.n_heads, d, rng, f"block{i}") for i in range(cfg.n_blocks)]
        self.lnf_g = Param(np.ones(d), name="lnf_g")
        self.lnf_b = Param(np.zeros(d), name="lnf_b")

    @property
    def dim(self) -> int:
        return self.cfg.dim

    def params(self) -> list[Param]:
        out = [self.item_emb, self.pos_emb]
        for b in self.blocks:
            out += b.params()
        return out + [self.lnf_g, self.lnf_b]

    def freeze(self) -> None:
        for p in self.params():
            p.frozen = True

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.params():
            h.update(p.value.tobytes())
        return h.hexdigest()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {f"seqrec/{p.name}": p.value for p in self.params()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.params():
            p.value[...] = state[f"seqrec/{p.name}"].reshape(p.value.shape)

    def hidden(self, ids: np.ndarray) -> Tensor:
        """Encoder states for a left-padded (B, T) id array."""
        B, T = ids.shape
        if T > self.cfg.max_seq_len:
            raise ValueError(f"sequence length {T} exceeds max_seq_len {self.cfg.max_seq_len}")
        valid = ids != PAD
        x = take_rows(self.item_emb, ids)
        x = mul(x, Tensor(np.sqrt(self.dim) * valid[..., None]))
        # right-aligned positions keep the readout independent of padding width
        pos = np.arange(self.cfg.max_seq_len - T, self.cfg.max_seq_len)
        x = add(x, take_rows(self.pos_emb, pos))
        allowed = attention_mask(valid)
        for blk in self.blocks:
            x = blk.forward(x, allowed)
        return layer_norm(x, self.lnf_g, self.lnf_b)


def pad_left(seqs: list[list[int]], length: int | None = None) -> np.ndarray:
    length = length or max(len(s) for s in seqs)
    out = np.zeros((len(seqs), length), dtype=np.int64)
    for i, s in enumerate(seqs):
        s = s[-length:]
        if s:
            out[i, length - len(s):] = s
    return out


def _check_ids(model: SeqRecModel, items: list[int]) -> None:
    for it in items:
        if not 0 < it <= model.n_items:
            raise IndexError(f"item id {it} outside catalog 1..{model.n_items}")


def sr_item_embed(model: SeqRecModel, item: int) -> np.ndarray:
    if not 0 <= item <= model.n_items:
        raise IndexError(f"item id {item} outside catalog 0..{model.n_items}")
    return model.item_emb.value[item].copy()


def encode_batch(model: SeqRecModel, histories: list[list[int]]) -> np.ndarray:
    """Readout z for each history: the encoder state at the last position."""
    if any(len(h) == 0 for h in histories):
        raise ValueError("cannot encode an empty sequence")
    for h in histories:
        _check_ids(model, h)
    ids = pad_left([h[-model.cfg.max_seq_len:] for h in histories])
    with no_tape():
        return model.hidden(ids).value[:, -1, :].copy()


def sr_encode(model: SeqRecModel, seq: InteractionSequence | list[int]) -> SequenceEmbedding:
    items = seq.items if isinstance(seq, InteractionSequence) else list(seq)
    if len(items) > model.cfg.max_seq_len:
        raise ValueError(f"sequence length {len(items)} exceeds max_seq_len {model.cfg.max_seq_len}")
    user = seq.user_id if isinstance(seq, InteractionSequence) else -1
    return SequenceEmbedding(encode_batch(model, [items])[0], user)


def sr_scores(model: SeqRecModel, seq: InteractionSequence | list[int]) -> np.ndarray:
    """Dot-product logits over the item table; padding row is -inf."""
    z = sr_encode(model, seq).vec
    logits = model.item_emb.value @ z
    logits[PAD] = -np.inf
    return logits


def _batch_loss(model: SeqRecModel, seqs: list[list[int]]) -> Tensor:
    T = min(max(len(s) for s in seqs) - 1, model.cfg.max_seq_len)
    inputs = pad_left([s[:-1] for s in seqs], T)
    targets = pad_left([s[1:] for s in seqs], T)
    h = model.hidden(inputs)
    logits = linear(h, model.item_emb)
    mask = np.zeros(model.n_items + 1)
    mask[PAD] = -np.inf
    # padded input positions carry no target
    targets = np.where(inputs == PAD, -1, targets)
    return cross_entropy(add(logits, Tensor(mask)), targets, ignore_id=-1)


def sr_train(model: SeqRecModel, data: list[InteractionSequence],
             cfg: SeqRecTrainConfig = SeqRecTrainConfig()) -> tuple[SeqRecModel, list[float]]:
    """Next-item training at every position; returns the model and per-epoch mean loss."""
    if not data:
        raise ConfigError("no training sequences")
    seqs = []
    for s in data:
        full = s.full()
        if max(full) > model.n_items:
            raise ConfigError(f"user {s.user_id} references item {max(full)} beyond catalog size {model.n_items}")
        if len(full) >= 2:
            seqs.append(full[-(model.cfg.max_seq_len + 1):])
    if not seqs:
        raise ConfigError("every training sequence is shorter than 2 items")
    params = [p for p in model.params() if not p.frozen]
    state = AdamState.for_params(params, weight_decay=cfg.weight_decay)
    bs = min(cfg.batch_size, len(seqs))
    rng = make_rng(cfg.seed, STREAM_BATCHES)
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(seqs))
        total, n = 0.0, 0
        for start in range(0, len(order), bs):
            batch = [seqs[i] for i in order[start:start + bs]]
            with Tape() as tape:
                loss = _batch_loss(model, batch)
                tape.backward(loss)
            # padding row stays at zero
            model.item_emb.grad[PAD] = 0.0
            adam_step(params, state, cfg.lr)
            total += loss.item() * len(batch)
            n += len(batch)
        curve.append(total / n)
        log.debug("seqrec epoch %d loss %.4f", epoch, curve[-1])
    return model, curve
