"""HitRatio@1 and ValidRatio over generated answers."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from ..lm.vocab import normalize


@dataclass
class EvalRecord:
    user: int
    generated: str
    matched: int | None  # candidate item id, if the answer names one
    correct: bool


@dataclass
class EvalReport:
    hit_ratio_1: float
    valid_ratio: float
    n_eval: int
    records: list[EvalRecord] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"hit_ratio_1": self.hit_ratio_1, "valid_ratio": self.valid_ratio,
                "n_eval": self.n_eval, "records": [asdict(r) for r in self.records]}

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def score_outputs(outputs: list[str], candidate_titles: list[dict[int, str]], truths: list[int],
                  users: list[int] | None = None) -> EvalReport:
    """Exact matching on normalized strings against each pair's candidate titles."""
    records = []
    hits = valid = 0
    users = users or list(range(len(outputs)))
    for user, out, cands, truth in zip(users, outputs, candidate_titles, truths):
        norm = normalize(out)
        matched = next((item for item, title in cands.items() if normalize(title) == norm), None)
        correct = matched is not None and matched == truth
        valid += matched is not None
        hits += correct
        records.append(EvalRecord(user, out, matched, correct))
    n = len(outputs)
    assert hits <= valid <= n
    return EvalReport(hits / n if n else 0.0, valid / n if n else 0.0, n, records)


def evaluate(model, pairs, catalog, max_new: int = 8, batch_size: int = 32) -> EvalReport:
    """Greedy-decode every pair and score it against its candidate set."""
    outputs = model.generate(pairs, max_new=max_new, batch_size=batch_size)
    cands = [{c: catalog.title(c) for c in p.candidates} for p in pairs]
    return score_outputs(outputs, cands, [p.truth for p in pairs], [p.user for p in pairs])
