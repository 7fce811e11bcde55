"""Per-group adapter gradient capture and cluster-pairwise cosine heatmaps."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class GradientRecord:
    step: int
    module_name: str
    group: str
    vector: np.ndarray


@dataclass
class Heatmap:
    matrix: np.ndarray
    labels: list[str]
    undefined: int = 0

    def reordered(self, order: list[int]) -> "Heatmap":
        o = np.asarray(order)
        return Heatmap(self.matrix[np.ix_(o, o)], [self.labels[i] for i in o], self.undefined)


class GradientCapture:
    """Checkpoint hook: one gradient-only pass per group (or per sequence) and module.

    ``groups`` maps a label to the pairs it stands for. With
    ``granularity="per-cluster"`` each group contributes the gradient of its
    mean loss; with ``"per-sequence"`` every pair is passed alone and recorded
    under its group label.
    """

    def __init__(self, groups: dict[str, list], granularity: str = "per-cluster",
                 modules: tuple[str, ...] | None = None):
        if granularity not in ("per-cluster", "per-sequence"):
            raise ValueError(f"unknown granularity {granularity!r}")
        self.groups = groups
        self.granularity = granularity
        self.modules = modules
        self.records: list[GradientRecord] = []

    def __call__(self, step: int, model) -> None:
        for label, pairs in self.groups.items():
            batches = [[p] for p in pairs] if self.granularity == "per-sequence" else [pairs]
            for batch in batches:
                for name, vec in model.module_gradients(batch).items():
                    if self.modules is None or name in self.modules:
                        self.records.append(GradientRecord(step, name, label, vec))


def _cos(a: np.ndarray, b: np.ndarray) -> float | None:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return None
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def grad_similarity(records: list[GradientRecord], steps: list[int] | None = None,
                    labels: list[str] | None = None) -> Heatmap:
    """Mean over steps of the mean over modules of cosine(group-mean gradients)."""
    if labels is None:
        labels = list(dict.fromkeys(r.group for r in records))
    steps = steps if steps is not None else sorted({r.step for r in records})
    modules = sorted({r.module_name for r in records})
    idx = {g: i for i, g in enumerate(labels)}
    G = len(labels)
    sums: dict[tuple[int, str, str], np.ndarray] = {}
    counts: dict[tuple[int, str, str], int] = {}
    for r in records:
        if r.step in steps and r.group in idx:
            key = (r.step, r.module_name, r.group)
            sums[key] = sums[key] + r.vector if key in sums else r.vector.astype(np.float64)
            counts[key] = counts.get(key, 0) + 1
    total = np.zeros((G, G))
    n = np.zeros((G, G))
    undefined = 0
    for step in steps:
        for mod in modules:
            means = {}
            for g in labels:
                key = (step, mod, g)
                if key not in sums:
                    raise ValueError(f"group {g!r} has no {mod!r} record at step {step}")
                means[g] = sums[key] / counts[key]
            for i in range(G):
                for j in range(i, G):
                    c = _cos(means[labels[i]], means[labels[j]])
                    if c is None:
                        undefined += 1
                        continue
                    total[i, j] += c
                    n[i, j] += 1
                    if i != j:
                        total[j, i] += c
                        n[j, i] += 1
    with np.errstate(invalid="ignore"):
        mat = np.where(n > 0, total / np.maximum(n, 1), np.nan)
    if undefined:
        log.warning("%d group pairs had a zero-norm gradient and were excluded", undefined)
    return Heatmap(mat, list(labels), undefined)


def block_contrast(h: Heatmap, family: dict[str, str]) -> tuple[float, float]:
    """(mean within-family, mean cross-family) over off-diagonal heatmap entries."""
    within, cross = [], []
    for i, a in enumerate(h.labels):
        for j, b in enumerate(h.labels):
            if i == j or np.isnan(h.matrix[i, j]):
                continue
            (within if family[a] == family[b] else cross).append(h.matrix[i, j])
    return (float(np.mean(within)) if within else float("nan"),
            float(np.mean(cross)) if cross else float("nan"))


def split_groups(pairs_by_cluster: dict[int, list], per_half: int,
                 rng: np.random.Generator) -> tuple[dict[str, list], dict[str, str]]:
    """Two disjoint halves per cluster, labelled "<c>a" and "<c>b"."""
    groups, family = {}, {}
    for c, pairs in pairs_by_cluster.items():
        if len(pairs) < 2 * per_half:
            raise ValueError(f"cluster {c} has {len(pairs)} sequences, need {2 * per_half}")
        pick = rng.choice(len(pairs), size=2 * per_half, replace=False)
        for part, sl in (("a", pick[:per_half]), ("b", pick[per_half:])):
            label = f"{c}{part}"
            groups[label] = [pairs[i] for i in sl]
            family[label] = str(c)
    return groups, family
