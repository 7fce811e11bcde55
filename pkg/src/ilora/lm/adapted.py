"""A frozen ToyLM plus projector, adapters and gate, trained in one of three modes.

``frozen`` evaluates the base model, ``uniform-lora`` attaches one shared LoRA
pair per adapted matrix, ``ilora`` splits each pair into experts mixed by a
per-sequence gate. All three share the same hybrid-prompt embedding path.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from ..adapters import (ExpertBank, GatingNetwork, LoraAdapter, gate, ilora_forward,
                        lora_forward, split_experts, target_dims)
from ..core import (AdamState, LrSchedule, Param, Tape, Tensor, adam_step, cross_entropy,
                    lr_at, make_rng, no_tape, scatter_rows, take_rows)
from ..core import checkpoint
from ..core.rng import STREAM_ADAPTER, STREAM_BATCHES, STREAM_GATE_NOISE
from ..seqrec import SeqRecModel
from .model import IGNORE, BehaviorProjector, ContextOverflowError, InstructionPair, ToyLM
from .vocab import Vocab

log = logging.getLogger(__name__)

MODES = ("frozen", "uniform-lora", "ilora")
GATE_SIGNALS = ("sequence", "random", "token-collapsed")


class ModeError(ValueError):
    pass


@dataclass
class AdapterConfig:
    r: int = 8
    alpha: float = 16.0
    k_experts: int = 4
    targets: tuple[str, ...] = ("q", "v")
    gate_sharing: str = "shared"  # or "per-layer"
    temperature: float = 1.0
    gate_signal: str = "sequence"
    projector: str = "linear"


class AdaptedLM:
    def __init__(self, lm: ToyLM, sr: SeqRecModel, vocab: Vocab, mode: str = "frozen",
                 cfg: AdapterConfig = AdapterConfig(), seed: int = 0,
                 projector: BehaviorProjector | None = None):
        if mode not in MODES:
            raise ModeError(f"unknown mode {mode!r}; expected one of {MODES}")
        self.lm, self.sr, self.vocab, self.mode, self.cfg = lm, sr, vocab, mode, cfg
        rng = make_rng(seed, STREAM_ADAPTER)
        self.projector = projector or BehaviorProjector(lm.cfg.d_model, sr.dim, rng, cfg.projector)
        self.lora: dict[tuple[int, str], LoraAdapter] = {}
        self.banks: dict[tuple[int, str], ExpertBank] = {}
        self.gates: list[GatingNetwork] = []
        if mode == "frozen":
            return
        for layer in range(lm.cfg.n_layers):
            for t in cfg.targets:
                d_in, d_out = target_dims(t, lm.cfg.d_model, lm.cfg.d_ff)
                self.lora[(layer, t)] = LoraAdapter.create(d_in, d_out, cfg.r, cfg.alpha, rng,
                                                           target=f"{layer}/{t}")
        if mode == "ilora":
            # experts are slices of the same initial LoRA pair, so K=1 matches uniform LoRA
            self.banks = {key: split_experts(ad, cfg.k_experts) for key, ad in self.lora.items()}
            self.lora = {}
            n_gates = 1 if cfg.gate_sharing == "shared" else lm.cfg.n_layers
            names = ["gate/w_g"] if n_gates == 1 else [f"gate/{i}/w_g" for i in range(n_gates)]
            self.gates = [GatingNetwork.create(cfg.k_experts, sr.dim, cfg.temperature, name=n)
                          for n in names]
        noise = make_rng(seed, STREAM_GATE_NOISE)
        self._collapse = noise.normal(0.0, 1.0 / np.sqrt(lm.cfg.d_model), size=(sr.dim, lm.cfg.d_model))
        self._noise_seed = seed

    # ------------------------------------------------------------------ params

    def adapter_params(self) -> list[Param]:
        out: list[Param] = []
        for ad in self.lora.values():
            out += ad.params()
        for bank in self.banks.values():
            out += bank.params()
        return out

    def gate_params(self) -> list[Param]:
        return [g.w_g for g in self.gates]

    def trainable_params(self) -> list[Param]:
        return self.adapter_params() + self.gate_params() + self.projector.params()

    def state_dict(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for (layer, t), ad in self.lora.items():
            out[f"adapter/{layer}/{t}/a_0"] = ad.a.value
            out[f"adapter/{layer}/{t}/b_0"] = ad.b.value
        for (layer, t), bank in self.banks.items():
            for k, (a, b) in enumerate(zip(bank.a, bank.b)):
                out[f"adapter/{layer}/{t}/a_{k}"] = a.value
                out[f"adapter/{layer}/{t}/b_{k}"] = b.value
        for g in self.gates:
            out[g.w_g.name] = g.w_g.value
        out.update(self.projector.state_dict())
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for (layer, t), ad in self.lora.items():
            ad.a.value[...] = state[f"adapter/{layer}/{t}/a_0"]
            ad.b.value[...] = state[f"adapter/{layer}/{t}/b_0"]
        for (layer, t), bank in self.banks.items():
            for k, (a, b) in enumerate(zip(bank.a, bank.b)):
                a.value[...] = state[f"adapter/{layer}/{t}/a_{k}"]
                b.value[...] = state[f"adapter/{layer}/{t}/b_{k}"]
        for g in self.gates:
            g.w_g.value[...] = state[g.w_g.name]
        self.projector.load_state(state)

    def base_checksum(self) -> str:
        h = hashlib.sha256()
        h.update(self.lm.checksum().encode())
        h.update(self.sr.checksum().encode())
        return h.hexdigest()

    # ------------------------------------------------------------------ gate

    def gate_input(self, pairs: list[InstructionPair]) -> np.ndarray:
        """Guidance signal per pair according to ``cfg.gate_signal``."""
        sig = self.cfg.gate_signal
        if sig == "sequence":
            missing = [p.user for p in pairs if p.z is None]
            if missing:
                raise ModeError(f"pairs for users {missing[:5]} carry no sequence embedding")
            return np.stack([p.z for p in pairs])
        if sig == "random":
            return np.stack([make_rng(self._noise_seed, STREAM_GATE_NOISE, p.user + 1)
                             .normal(size=self.sr.dim) for p in pairs])
        if sig == "token-collapsed":
            emb = self.lm.tok_emb.value
            rows = []
            for p in pairs:
                ids = [t for t in p.prompt_ids if t != self.vocab.beh_id]
                rows.append(self._collapse @ emb[ids].mean(axis=0))
            return np.stack(rows)
        raise ModeError(f"unknown gate signal {sig!r}")

    def expert_weights(self, pairs: list[InstructionPair]) -> list[Tensor]:
        if self.mode != "ilora":
            raise ModeError("expert weights exist only in ilora mode")
        z = self.gate_input(pairs)
        return [gate(g, z) for g in self.gates]

    def _adapt_fn(self, omegas: list[Tensor] | None):
        if self.mode == "frozen":
            return None
        if self.mode == "uniform-lora":
            lora = self.lora

            def adapt(layer, name, h, w):
                ad = lora.get((layer, name))
                return None if ad is None else lora_forward(w, ad, h)
            return adapt
        banks = self.banks

        def adapt(layer, name, h, w):
            bank = banks.get((layer, name))
            if bank is None:
                return None
            om = omegas[layer] if len(omegas) > 1 else omegas[0]
            return ilora_forward(w, bank, om, h)
        return adapt

    # ------------------------------------------------------------------ batches

    def _embed(self, ids: np.ndarray, beh: list[list[int]]) -> Tensor:
        x = take_rows(self.lm.tok_emb, ids)
        rows_b, rows_t = np.nonzero(ids == self.vocab.beh_id)
        items = [it for row in beh for it in row]
        if len(items) != rows_b.size:
            raise ValueError(f"{rows_b.size} behavior slots but {len(items)} behavior items")
        if items:
            proj = self.projector(self.sr.item_emb.value[np.array(items)])
            x = scatter_rows(x, (rows_b, rows_t), proj)
        return x

    def assemble(self, pairs: list[InstructionPair], prompt_loss: bool = False):
        """Right-padded (ids, targets, key_valid) for teacher-forced training."""
        seqs, tgts = [], []
        beh_id = self.vocab.beh_id
        for p in pairs:
            full = [self.vocab.bos_id] + p.prompt_ids + p.target_ids
            if len(full) - 1 > self.lm.cfg.context:
                raise ContextOverflowError(f"pair for user {p.user} needs {len(full) - 1} positions, "
                                           f"context is {self.lm.cfg.context}")
            t = full[1:]
            n_prompt = len(p.prompt_ids)
            if prompt_loss:
                t = [IGNORE if tok == beh_id else tok for tok in t]
            else:
                t = [IGNORE] * n_prompt + t[n_prompt:]
            seqs.append(full[:-1])
            tgts.append(t)
        T = max(len(s) for s in seqs)
        ids = np.full((len(seqs), T), self.vocab.pad_id, dtype=np.int64)
        targets = np.full((len(seqs), T), IGNORE, dtype=np.int64)
        for i, (s, t) in enumerate(zip(seqs, tgts)):
            ids[i, :len(s)] = s
            targets[i, :len(t)] = t
        return ids, targets, ids != self.vocab.pad_id

    def batch_loss(self, pairs: list[InstructionPair], prompt_loss: bool = False) -> Tensor:
        ids, targets, valid = self.assemble(pairs, prompt_loss)
        x = self._embed(ids, [p.behavior_items for p in pairs])
        omegas = self.expert_weights(pairs) if self.mode == "ilora" else None
        positions = np.arange(ids.shape[1])
        logits = self.lm.forward(x, positions, valid, self._adapt_fn(omegas))
        return cross_entropy(logits, targets, IGNORE)

    # ------------------------------------------------------------------ decoding

    def generate(self, pairs: list[InstructionPair], max_new: int = 8,
                 batch_size: int = 32) -> list[str]:
        """Greedy decoding until EOS or ``max_new`` tokens; returns detokenized text."""
        out: list[str] = []
        for start in range(0, len(pairs), batch_size):
            out += self._generate_batch(pairs[start:start + batch_size], max_new)
        return out

    def _generate_batch(self, pairs: list[InstructionPair], max_new: int) -> list[str]:
        if max_new <= 0:
            return ["" for _ in pairs]
        prompts = [[self.vocab.bos_id] + p.prompt_ids for p in pairs]
        longest = max(len(s) for s in prompts)
        if longest + max_new > self.lm.cfg.context:
            raise ContextOverflowError(f"prompt of {longest} tokens leaves no room for "
                                       f"{max_new} new tokens in context {self.lm.cfg.context}")
        B = len(pairs)
        eos, pad = self.vocab.eos_id, self.vocab.pad_id
        generated: list[list[int]] = [[] for _ in range(B)]
        done = np.zeros(B, dtype=bool)
        with no_tape():
            omegas = self.expert_weights(pairs) if self.mode == "ilora" else None
            adapt = self._adapt_fn(omegas)
            beh = [p.behavior_items for p in pairs]
            for _ in range(max_new):
                seqs = [s + g for s, g in zip(prompts, generated)]
                T = max(len(s) for s in seqs)
                ids = np.full((B, T), pad, dtype=np.int64)
                positions = np.zeros((B, T), dtype=np.int64)
                for i, s in enumerate(seqs):
                    ids[i, T - len(s):] = s
                    positions[i, T - len(s):] = np.arange(len(s))
                valid = ids != pad
                x = self._embed(ids, beh)
                logits = self.lm.forward(x, positions, valid, adapt).value[:, -1, :]
                # specials other than EOS are never valid outputs
                logits[:, [pad, self.vocab.bos_id, self.vocab.beh_id]] = -np.inf
                nxt = logits.argmax(axis=-1)
                for i in range(B):
                    if not done[i]:
                        if nxt[i] == eos:
                            done[i] = True
                        else:
                            generated[i].append(int(nxt[i]))
                if done.all():
                    break
        return [self.vocab.decode(g) for g in generated]

    # ------------------------------------------------------------------ gradients

    def module_gradients(self, pairs: list[InstructionPair]) -> dict[str, np.ndarray]:
        """Adapter gradient of the mean loss over ``pairs``, averaged across layers per
        module name. No parameter is updated."""
        if self.mode == "frozen":
            raise ModeError("frozen mode has no adapter gradients")
        params = self.trainable_params()
        before = [p.value.copy() for p in params]
        for p in params:
            p.zero_grad()
        with Tape() as tape:
            loss = self.batch_loss(pairs)
            tape.backward(loss)
        per_module: dict[str, list[np.ndarray]] = {}
        for layer in range(self.lm.cfg.n_layers):
            for t in self.cfg.targets:
                if self.mode == "uniform-lora":
                    ad = self.lora[(layer, t)]
                    ga, gb = ad.a.grad, ad.b.grad
                else:
                    bank = self.banks[(layer, t)]
                    ga = np.concatenate([a.grad for a in bank.a], axis=0)
                    gb = np.concatenate([b.grad for b in bank.b], axis=1)
                per_module.setdefault(t, []).append(np.concatenate([ga.ravel(), gb.ravel()]))
        for p, old in zip(params, before):
            p.zero_grad()
            assert np.array_equal(p.value, old), f"gradient pass changed {p.name}"
        return {t: np.mean(vs, axis=0) for t, vs in per_module.items()}


def lm_loss(model: AdaptedLM, pair: InstructionPair, mode: str | None = None) -> Tensor:
    """Mean target-token NLL for a single pair, in the bundle's mode."""
    if mode is not None and mode != model.mode:
        raise ModeError(f"bundle is in {model.mode!r} mode, not {mode!r}")
    if model.mode == "ilora" and model.cfg.gate_signal == "sequence" and pair.z is None:
        raise ModeError("ilora mode needs a gate context (sequence embedding) for the pair")
    return model.batch_loss([pair])


def greedy_decode(model: AdaptedLM, pair: InstructionPair, max_new: int = 8) -> str:
    return model.generate([pair], max_new)[0]


# ---------------------------------------------------------------------- training


@dataclass
class FinetuneConfig:
    steps: int = 1000
    batch_size: int = 8
    max_lr: float = 2e-4
    warmup_steps: int = 50
    floor_lr: float = 0.0
    weight_decay: float = 0.0
    ckpt_every: int = 100
    seed: int = 0
    prompt_loss: bool = False


class ConfigError(ValueError):
    pass


def batch_schedule(n: int, batch_size: int, steps: int, seed: int) -> Iterable[np.ndarray]:
    """Index batches drawn from fresh permutations, one per pass over the data."""
    rng = make_rng(seed, STREAM_BATCHES)
    bs = min(batch_size, n)
    order, pos = rng.permutation(n), 0
    for _ in range(steps):
        if pos + bs > n:
            order, pos = rng.permutation(n), 0
        yield order[pos:pos + bs]
        pos += bs


def train_loop(model: AdaptedLM, params: list[Param], pairs: list[InstructionPair],
               cfg: FinetuneConfig,
               on_checkpoint: Callable[[int, AdaptedLM], None] | None = None) -> list[float]:
    if not pairs:
        raise ConfigError("no training pairs")
    sched = LrSchedule(cfg.max_lr, min(cfg.warmup_steps, cfg.steps), cfg.steps, cfg.floor_lr)
    state = AdamState.for_params(params, weight_decay=cfg.weight_decay)
    curve = []
    for step, idx in enumerate(batch_schedule(len(pairs), cfg.batch_size, cfg.steps, cfg.seed), 1):
        batch = [pairs[i] for i in idx]
        with Tape() as tape:
            loss = model.batch_loss(batch, cfg.prompt_loss)
            tape.backward(loss)
        adam_step(params, state, lr_at(sched, step))
        curve.append(loss.item())
        if on_checkpoint is not None and cfg.ckpt_every and step % cfg.ckpt_every == 0:
            on_checkpoint(step, model)
    return curve


def finetune(model: AdaptedLM, pairs: list[InstructionPair], cfg: FinetuneConfig = FinetuneConfig(),
             on_checkpoint: Callable[[int, AdaptedLM], None] | None = None,
             ckpt_dir=None) -> list[float]:
    """Train adapters, gate and projector with the base LM and recommender frozen."""
    if model.mode == "frozen":
        raise ModeError("finetune needs uniform-lora or ilora mode")
    if any(not p.frozen for p in model.lm.params() + model.sr.params()):
        raise ConfigError("base LM and recommender must be frozen before fine-tuning")

    def hook(step, m):
        if ckpt_dir is not None:
            checkpoint.save(f"{ckpt_dir}/step_{step:06d}.ckpt", m.state_dict())
        if on_checkpoint is not None:
            on_checkpoint(step, m)

    return train_loop(model, model.trainable_params(), pairs, cfg, hook)


def pretrain_lm(model: AdaptedLM, pairs: list[InstructionPair], cfg: FinetuneConfig) -> list[float]:
    """Full next-token training of the base LM and projector, then freeze the LM."""
    model.lm.unfreeze()
    params = model.lm.params() + model.projector.params()
    curve = train_loop(model, params, pairs, cfg)
    model.lm.freeze()
    return curve
