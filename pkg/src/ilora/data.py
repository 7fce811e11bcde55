"""Interaction and catalog I/O, synthetic regime data, candidate sets and prompt rendering."""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import make_rng
from .core.rng import STREAM_CANDIDATES, STREAM_DATA
from .lm.model import ContextOverflowError, InstructionPair
from .lm.vocab import BEH_MARKER, Vocab, build_vocab, tokenize
from .seqrec import InteractionSequence, SeqRecModel, encode_batch

log = logging.getLogger(__name__)

DEFAULT_TEMPLATE = ("this user has watched {history} in the previous. recommend the next item "
                    "from the following candidates: {candidates}. answer:")
N_CANDIDATES = 21

REGIME_NAMES = ("thriller", "comedy", "jazz", "western", "drama", "anime", "indie", "sports",
                "horror", "folk", "opera", "punk", "metal", "blues", "soul", "disco")


class ParseError(ValueError):
    pass


class UnknownItemError(LookupError):
    pass


class CapacityError(ValueError):
    pass


@dataclass
class ItemCatalog:
    titles: dict[int, str]

    @property
    def size(self) -> int:
        return len(self.titles)

    def __len__(self) -> int:
        return len(self.titles)

    def title(self, item: int) -> str:
        return self.titles[item]


@dataclass
class CandidateSet:
    items: list[int]
    truth_index: int

    @property
    def truth(self) -> int:
        return self.items[self.truth_index]


@dataclass(frozen=True)
class SyntheticSpec:
    num_regimes: int = 4
    items_per_regime: int = 40
    users_per_regime: int = 300
    seq_len: tuple[int, int] = (4, 10)
    cross_regime_prob: float = 0.05
    popularity_skew: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.cross_regime_prob <= 1.0:
            raise ValueError("cross_regime_prob must be a probability")
        if not 1 <= self.num_regimes <= len(REGIME_NAMES):
            raise ValueError(f"num_regimes must be in 1..{len(REGIME_NAMES)}")
        lo, hi = self.seq_len
        if not 2 <= lo <= hi:
            raise ValueError("seq_len needs 2 <= min <= max (history plus the held-out item)")


# ----------------------------------------------------------------------------
# files


def load_catalog(path: str | os.PathLike) -> ItemCatalog:
    titles: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected 'item_id<TAB>title'")
            try:
                item = int(parts[0])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: item id {parts[0]!r} is not an integer") from None
            if item in titles:
                raise ParseError(f"{path}:{lineno}: duplicate item id {item}")
            if not parts[1].strip():
                raise ParseError(f"{path}:{lineno}: empty title for item {item}")
            titles[item] = parts[1].strip()
    expected = set(range(1, len(titles) + 1))
    if set(titles) != expected:
        gap = min(expected - set(titles)) if expected - set(titles) else min(set(titles) - expected)
        raise ParseError(f"{path}: item ids must be dense 1..{len(titles)}; gap at {gap}")
    return ItemCatalog(dict(sorted(titles.items())))


def save_catalog(path: str | os.PathLike, catalog: ItemCatalog) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for item, title in catalog.titles.items():
            fh.write(f"{item}\t{title}\n")


def read_interactions(path: str | os.PathLike, catalog: ItemCatalog | None = None
                      ) -> tuple[list[InteractionSequence], int]:
    """Parse ``user<TAB>item<TAB>timestamp`` rows; returns sequences and the dropped count."""
    rows: dict[int, list[tuple[float, int, int]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 'user_id<TAB>item_id<TAB>timestamp'")
            try:
                user, item, ts = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: malformed row {line.strip()!r}") from None
            if catalog is not None and item not in catalog.titles:
                raise UnknownItemError(f"{path}:{lineno}: item {item} not in catalog")
            rows.setdefault(user, []).append((ts, lineno, item))
    seqs, dropped = [], 0
    for user, events in rows.items():
        items = [it for _, _, it in sorted(events)]
        if len(items) < 2:
            dropped += 1
            continue
        seqs.append(InteractionSequence(user, items[:-1], items[-1]))
    return seqs, dropped


def load_interactions(path: str | os.PathLike, catalog: ItemCatalog | None = None
                      ) -> list[InteractionSequence]:
    seqs, dropped = read_interactions(path, catalog)
    if dropped:
        log.warning("dropped %d users with fewer than 2 interactions", dropped)
    return seqs


def save_interactions(path: str | os.PathLike, seqs: list[InteractionSequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for s in seqs:
            for t, item in enumerate(s.full()):
                fh.write(f"{s.user_id}\t{item}\t{t}\n")


# ----------------------------------------------------------------------------
# synthetic data


def user_regime(spec: SyntheticSpec, user_id: int) -> int:
    return (user_id - 1) // spec.users_per_regime


def item_regime(spec: SyntheticSpec, item: int) -> int:
    return (item - 1) // spec.items_per_regime


def gen_synthetic(spec: SyntheticSpec) -> tuple[ItemCatalog, list[InteractionSequence]]:
    """Users grouped into regimes with disjoint item pools.

    Each draw comes from the user's own pool, except with ``cross_regime_prob``
    from a uniformly chosen other pool. Inside a pool, item j (0-based) has
    weight (j+1)^-popularity_skew.
    """
    rng = make_rng(spec.seed, STREAM_DATA)
    R, n = spec.num_regimes, spec.items_per_regime
    titles = {}
    for g in range(R):
        for j in range(n):
            item = g * n + j + 1
            # the id leads so that copying a candidate starts from a unique token
            titles[item] = f"item {item} {REGIME_NAMES[g]}"
    w = (np.arange(1, n + 1, dtype=np.float64)) ** -spec.popularity_skew
    w /= w.sum()
    seqs = []
    lo, hi = spec.seq_len
    for g in range(R):
        for u in range(spec.users_per_regime):
            user = g * spec.users_per_regime + u + 1
            length = int(rng.integers(lo, hi + 1))
            items = []
            for _ in range(length):
                pool = g
                if R > 1 and rng.random() < spec.cross_regime_prob:
                    pool = int(rng.choice([r for r in range(R) if r != g]))
                items.append(pool * n + int(rng.choice(n, p=w)) + 1)
            seqs.append(InteractionSequence(user, items[:-1], items[-1]))
    return ItemCatalog(titles), seqs


def split_sequences(seqs: list[InteractionSequence], test_frac: float, seed: int
                    ) -> tuple[list[InteractionSequence], list[InteractionSequence]]:
    rng = make_rng(seed, STREAM_DATA, 1)
    order = rng.permutation(len(seqs))
    n_test = int(round(test_frac * len(seqs)))
    test = sorted(order[:n_test])
    train = sorted(order[n_test:])
    return [seqs[i] for i in train], [seqs[i] for i in test]


# ----------------------------------------------------------------------------
# candidates and prompts


def make_candidates(seq: InteractionSequence, catalog: ItemCatalog, rng: np.random.Generator,
                    n: int = N_CANDIDATES) -> CandidateSet:
    """n-1 uniform draws from items outside history and truth, plus the truth."""
    if seq.truth is None:
        raise ValueError(f"user {seq.user_id} has no held-out item")
    excluded = set(seq.items) | {seq.truth}
    pool = [i for i in catalog.titles if i not in excluded]
    if len(pool) < n - 1:
        raise CapacityError(f"user {seq.user_id}: only {len(pool)} non-interacted items, need {n - 1}")
    picked = rng.choice(len(pool), size=n - 1, replace=False)
    items = [pool[i] for i in picked]
    pos = int(rng.integers(0, n))
    items.insert(pos, seq.truth)
    return CandidateSet(items, pos)


def template_texts(template: str) -> str:
    return template.replace("{history}", " ").replace("{candidates}", " ")


def corpus_vocab(catalog: ItemCatalog, template: str = DEFAULT_TEMPLATE) -> Vocab:
    return build_vocab([template_texts(template)] + list(catalog.titles.values()))


def render_prompt(template: str, catalog: ItemCatalog, history: list[int], candidates: list[int]) -> str:
    hist = " ".join(f"{catalog.title(i)} {BEH_MARKER}" for i in history)
    cands = ", ".join(catalog.title(i) for i in candidates)
    return template.format(history=hist, candidates=cands)


def _encode_pair(pair: InstructionPair, vocab: Vocab) -> InstructionPair:
    pair.prompt_ids = vocab.encode_prompt(pair.prompt_text)
    pair.behavior_items = list(pair.items)
    pair.target_ids = tokenize(vocab, pair.target_text) + [vocab.eos_id]
    return pair


def render_pairs(seqs: list[InteractionSequence], catalog: ItemCatalog, sr: SeqRecModel | None,
                 vocab: Vocab, template: str = DEFAULT_TEMPLATE, seed: int = 0,
                 context: int = 512, max_history: int | None = None) -> list[InstructionPair]:
    """One instruction pair per sequence; candidates use a per-user random stream."""
    pairs = []
    if max_history is None:
        max_history = sr.cfg.max_seq_len if sr is not None else 50
    for s in seqs:
        if not s.items:
            raise ValueError(f"user {s.user_id} has an empty history")
        history = s.items[-max_history:]
        cands = make_candidates(s, catalog, make_rng(seed, STREAM_CANDIDATES, s.user_id))
        text = render_prompt(template, catalog, history, cands.items)
        pair = _encode_pair(InstructionPair(s.user_id, history, cands.items, s.truth, text,
                                            catalog.title(s.truth)), vocab)
        need = 1 + len(pair.prompt_ids) + len(pair.target_ids) - 1
        if need > context:
            raise ContextOverflowError(f"user {s.user_id}: pair needs {need} positions, context is {context}")
        pairs.append(pair)
    if sr is not None:
        attach_embeddings(pairs, sr)
    return pairs


def attach_embeddings(pairs: list[InstructionPair], sr: SeqRecModel, chunk: int = 512) -> None:
    for start in range(0, len(pairs), chunk):
        part = pairs[start:start + chunk]
        z = encode_batch(sr, [p.items for p in part])
        for p, row in zip(part, z):
            p.z = row


def with_random_answers(pairs: list[InstructionPair], catalog: ItemCatalog, vocab: Vocab,
                        seed: int) -> list[InstructionPair]:
    """Copies whose answer is a uniformly drawn candidate instead of the truth."""
    out = []
    for p in pairs:
        rng = make_rng(seed, STREAM_CANDIDATES, p.user, 7)
        pick = p.candidates[int(rng.integers(0, len(p.candidates)))]
        q = replace(p, target_text=catalog.title(pick))
        q.target_ids = tokenize(vocab, q.target_text) + [vocab.eos_id]
        out.append(q)
    return out


def pretraining_pairs(seqs: list[InteractionSequence], catalog: ItemCatalog, vocab: Vocab,
                      template: str = DEFAULT_TEMPLATE, seed: int = 0, copies: int = 1,
                      min_candidates: int = 2, max_history: int = 50) -> list[InstructionPair]:
    """Varied prompts for base-LM pretraining, answered by a random candidate.

    Each copy of a sequence keeps a random suffix of its history and lists a
    random number of candidates between ``min_candidates`` and the full 21.
    Short prompts are cheap and make the copy-from-candidates skill dense in
    the training signal; full-size prompts keep late positions trained.
    """
    out = []
    for c in range(copies):
        for s in seqs:
            rng = make_rng(seed, STREAM_CANDIDATES, s.user_id, 100 + c)
            hist = s.items[-max_history:]
            hist = hist[len(hist) - int(rng.integers(1, len(hist) + 1)):]
            n = int(rng.integers(min_candidates, N_CANDIDATES + 1))
            pool = [i for i in catalog.titles if i not in set(hist)]
            cands = [pool[i] for i in rng.choice(len(pool), size=min(n, len(pool)), replace=False)]
            answer = cands[int(rng.integers(0, len(cands)))]
            text = render_prompt(template, catalog, hist, cands)
            out.append(_encode_pair(InstructionPair(s.user_id, hist, cands, answer, text,
                                                    catalog.title(answer)), vocab))
    return out


def write_pairs_jsonl(path: str | os.PathLike, pairs: list[InstructionPair]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def read_pairs_jsonl(path: str | os.PathLike, vocab: Vocab, sr: SeqRecModel | None = None
                     ) -> list[InstructionPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            pairs.append(_encode_pair(InstructionPair(d["user"], d["items"], d["candidates"], d["truth"],
                                                      d["prompt_text"], d["target_text"]), vocab))
    if sr is not None and pairs:
        attach_embeddings(pairs, sr)
    return pairs
