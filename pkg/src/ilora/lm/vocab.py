"""Closed word-level vocabulary with lowercase, punctuation-splitting tokenization."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable

PAD, BOS, EOS, BEH, UNK = "<pad>", "<bos>", "<eos>", "<beh>", "<unk>"
SPECIALS = (PAD, BOS, EOS, BEH, UNK)
BEH_MARKER = "[BEH]"

_WORD = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def words(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def normalize(text: str) -> str:
    """Canonical form used for matching generated text against titles."""
    return " ".join(words(text))


@dataclass
class Vocab:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def bos_id(self) -> int:
        return self.index[BOS]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    @property
    def beh_id(self) -> int:
        return self.index[BEH]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    def encode_prompt(self, text: str) -> list[int]:
        """Tokenize prompt text, turning each ``[BEH]`` marker into the behavior slot id."""
        pieces = text.split(BEH_MARKER)
        ids: list[int] = []
        for i, piece in enumerate(pieces):
            if i:
                ids.append(self.beh_id)
            ids.extend(tokenize(self, piece))
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        out = []
        for i in ids:
            tok = self.tokens[i]
            if tok in (PAD, BOS, EOS):
                continue
            out.append(BEH_MARKER if tok == BEH else tok)
        return " ".join(out)


def tokenize(v: Vocab, text: str) -> list[int]:
    unk = v.unk_id
    return [v.index.get(w, unk) for w in words(text)]


def detokenize(v: Vocab, ids: Iterable[int]) -> str:
    return v.decode(ids)


def build_vocab(texts: Iterable[str]) -> Vocab:
    """Specials first, then words in order of first appearance."""
    tokens = list(SPECIALS)
    seen = set(tokens)
    for text in texts:
        for w in words(text.replace(BEH_MARKER, " ")):
            if w not in seen:
                seen.add(w)
                tokens.append(w)
    return Vocab(tokens)
