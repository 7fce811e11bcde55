"""Seeded, counter-based random streams (Philox), stable across platforms."""
from __future__ import annotations

import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for ``seed`` and an optional stream key.

    Streams with distinct keys never overlap, so per-user or per-stage
    randomness does not depend on how many draws other stages made.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(int(k) & 0xFFFFFFFF for k in stream)])
    return np.random.Generator(np.random.Philox(ss))


# stream keys for the pipeline stages
STREAM_DATA = 1
STREAM_SEQREC = 2
STREAM_LM = 3
STREAM_ADAPTER = 4
STREAM_CANDIDATES = 5
STREAM_BATCHES = 6
STREAM_CLUSTER = 7
STREAM_GATE_NOISE = 8
