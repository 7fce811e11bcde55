import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ilora.core import make_rng
from ilora.data import (DEFAULT_TEMPLATE, N_CANDIDATES, CapacityError, ItemCatalog, ParseError,
                        SyntheticSpec, UnknownItemError, corpus_vocab, gen_synthetic, item_regime,
                        load_catalog, load_interactions, make_candidates, pretraining_pairs,
                        read_interactions, read_pairs_jsonl, render_pairs, render_prompt,
                        save_catalog, save_interactions, split_sequences, user_regime,
                        with_random_answers, write_pairs_jsonl)
from ilora.lm import ContextOverflowError
from ilora.lm.vocab import BEH_MARKER
from ilora.seqrec import InteractionSequence


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------- files


def test_load_catalog(tmp_path):
    cat = load_catalog(write(tmp_path / "c.tsv", "1\tHeat\n2\tThe Matrix\n"))
    assert cat.size == 2 and cat.title(2) == "The Matrix"


@pytest.mark.parametrize("text, pattern", [
    ("1\ta\n1\tb\n", "duplicate"),
    ("1\t \n", "empty title"),
    ("1\ta\n3\tb\n", "gap at 2"),
    ("x\ta\n", "not an integer"),
    ("1\n", "expected"),
])
def test_load_catalog_errors(tmp_path, text, pattern):
    with pytest.raises(ParseError, match=pattern):
        load_catalog(write(tmp_path / "c.tsv", text))


def test_catalog_round_trip(tmp_path):
    cat = ItemCatalog({1: "a b", 2: "c"})
    save_catalog(tmp_path / "c.tsv", cat)
    assert load_catalog(tmp_path / "c.tsv") == cat


def test_interactions_minimal_split(tmp_path):
    seqs = load_interactions(write(tmp_path / "i.tsv", "7\t1\t10\n7\t2\t11\n7\t3\t12\n"))
    assert len(seqs) == 1 and seqs[0].items == [1, 2] and seqs[0].truth == 3


def test_interactions_sorted_by_time_and_stable(tmp_path):
    rows = "1\t5\t3\n1\t4\t1\n1\t9\t2\n1\t8\t2\n"
    seqs, _ = read_interactions(write(tmp_path / "i.tsv", rows))
    # timestamp 2 appears twice; file order breaks the tie
    assert seqs[0].full() == [4, 9, 8, 5]


def test_short_users_dropped_and_counted(tmp_path):
    seqs, dropped = read_interactions(write(tmp_path / "i.tsv", "1\t1\t0\n2\t1\t0\n2\t2\t1\n"))
    assert dropped == 1 and [s.user_id for s in seqs] == [2]


def test_interactions_errors(tmp_path):
    with pytest.raises(ParseError, match=":2:"):
        read_interactions(write(tmp_path / "i.tsv", "1\t1\t0\n1\tx\t1\n"))
    cat = ItemCatalog({1: "a"})
    with pytest.raises(UnknownItemError):
        read_interactions(write(tmp_path / "j.tsv", "1\t1\t0\n1\t2\t1\n"), cat)


def test_interactions_round_trip(tmp_path):
    seqs = [InteractionSequence(3, [1, 2], 4), InteractionSequence(1, [5], 6)]
    save_interactions(tmp_path / "i.tsv", seqs)
    back = load_interactions(tmp_path / "i.tsv")
    assert sorted((s.user_id, s.items, s.truth) for s in back) == [(1, [5], 6), (3, [1, 2], 4)]


# ---------------------------------------------------------------- synthetic


def test_synthetic_pure_pools():
    spec = SyntheticSpec(cross_regime_prob=0.0, users_per_regime=20)
    catalog, seqs = gen_synthetic(spec)
    assert catalog.size == 160
    for s in seqs:
        assert {item_regime(spec, i) for i in s.full()} == {user_regime(spec, s.user_id)}


def test_synthetic_titles_and_lengths():
    spec = SyntheticSpec(users_per_regime=10)
    catalog, seqs = gen_synthetic(spec)
    assert catalog.title(1) == "item 1 thriller" and catalog.title(41) == "item 41 comedy"
    assert all(4 <= len(s.full()) <= 10 for s in seqs)


def test_single_regime():
    catalog, seqs = gen_synthetic(SyntheticSpec(num_regimes=1, users_per_regime=5))
    assert catalog.size == 40 and len(seqs) == 5


def test_synthetic_deterministic():
    a = gen_synthetic(SyntheticSpec(seed=3, users_per_regime=5))
    b = gen_synthetic(SyntheticSpec(seed=3, users_per_regime=5))
    assert a == b


def test_cross_regime_rate():
    spec = SyntheticSpec(cross_regime_prob=0.2, users_per_regime=200)
    _, seqs = gen_synthetic(spec)
    flags = [item_regime(spec, i) != user_regime(spec, s.user_id) for s in seqs for i in s.full()]
    assert abs(np.mean(flags) - 0.2) < 0.02


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(cross_regime_prob=1.5)
    with pytest.raises(ValueError):
        SyntheticSpec(seq_len=(1, 3))


def test_split_is_disjoint_and_deterministic():
    _, seqs = gen_synthetic(SyntheticSpec(users_per_regime=25))
    train, test = split_sequences(seqs, 0.1, 0)
    assert len(test) == 10 and len(train) == 90
    assert not {s.user_id for s in train} & {s.user_id for s in test}
    assert split_sequences(seqs, 0.1, 0) == (train, test)


# ---------------------------------------------------------------- candidates


def test_candidates_whole_catalog_when_forced():
    cat = ItemCatalog({i: f"t {i}" for i in range(1, 22)})
    cs = make_candidates(InteractionSequence(1, [], 5), cat, make_rng(0))
    assert sorted(cs.items) == list(range(1, 22)) and cs.truth == 5


def test_candidates_capacity_error():
    cat = ItemCatalog({i: f"t {i}" for i in range(1, 22)})
    with pytest.raises(CapacityError):
        make_candidates(InteractionSequence(1, [1], 5), cat, make_rng(0))


def test_candidate_contract_over_many_draws():
    cat = ItemCatalog({i: f"t {i}" for i in range(1, 61)})
    rng = make_rng(1)
    for _ in range(1000):
        hist = [int(x) for x in rng.choice(60, int(rng.integers(1, 20)), replace=False) + 1]
        truth = int(rng.integers(1, 61))
        cs = make_candidates(InteractionSequence(0, hist, truth), cat, rng)
        assert len(cs.items) == N_CANDIDATES == len(set(cs.items))
        assert cs.items.count(truth) == 1 and cs.items[cs.truth_index] == truth
        assert not (set(cs.items) - {truth}) & set(hist)


# ---------------------------------------------------------------- prompts


@pytest.fixture(scope="module")
def small_world():
    spec = SyntheticSpec(users_per_regime=6)
    catalog, seqs = gen_synthetic(spec)
    return catalog, seqs, corpus_vocab(catalog)


def test_render_prompt_layout():
    cat = ItemCatalog({1: "Heat", 2: "Up", 3: "Big"})
    text = render_prompt(DEFAULT_TEMPLATE, cat, [1, 2], [3, 1])
    assert text.startswith(f"this user has watched Heat {BEH_MARKER} Up {BEH_MARKER} in the previous.")
    assert text.endswith("candidates: Big, Heat. answer:")


def test_render_pairs_contract(small_world):
    catalog, seqs, vocab = small_world
    pairs = render_pairs(seqs, catalog, None, vocab)
    for p, s in zip(pairs, seqs):
        assert p.target_text == catalog.title(s.truth)
        assert p.target_ids[-1] == vocab.eos_id
        assert p.prompt_ids.count(vocab.beh_id) == len(p.items) == len(s.items)
        assert p.candidates.count(p.truth) == 1


def test_render_pairs_deterministic_per_user(small_world):
    catalog, seqs, vocab = small_world
    a = render_pairs(seqs, catalog, None, vocab, seed=4)
    b = render_pairs(seqs[::-1], catalog, None, vocab, seed=4)[::-1]
    assert [p.prompt_text for p in a] == [p.prompt_text for p in b]


def test_render_pairs_rejects_empty_history(small_world):
    catalog, _, vocab = small_world
    with pytest.raises(ValueError):
        render_pairs([InteractionSequence(1, [], 2)], catalog, None, vocab)


def test_context_overflow_names_user(small_world):
    catalog, seqs, vocab = small_world
    with pytest.raises(ContextOverflowError, match=f"user {seqs[0].user_id}"):
        render_pairs(seqs[:1], catalog, None, vocab, context=20)


def test_jsonl_round_trip(tmp_path, small_world):
    catalog, seqs, vocab = small_world
    pairs = render_pairs(seqs, catalog, None, vocab)
    write_pairs_jsonl(tmp_path / "p.jsonl", pairs)
    first = json.loads((tmp_path / "p.jsonl").read_text().splitlines()[0])
    assert set(first) == {"user", "items", "candidates", "truth", "prompt_text", "target_text"}
    back = read_pairs_jsonl(tmp_path / "p.jsonl", vocab)
    assert [p.prompt_ids for p in back] == [p.prompt_ids for p in pairs]
    for p in back:
        assert render_prompt(DEFAULT_TEMPLATE, catalog, p.items, p.candidates) == p.prompt_text


def test_random_answers_are_candidates(small_world):
    catalog, seqs, vocab = small_world
    pairs = render_pairs(seqs, catalog, None, vocab)
    rand = with_random_answers(pairs, catalog, vocab, 0)
    assert all(catalog.title(c) == q.target_text for q in rand
               for c in [next(c for c in q.candidates if catalog.title(c) == q.target_text)])
    assert any(q.target_text != p.target_text for p, q in zip(pairs, rand))
    assert [p.prompt_text for p in rand] == [p.prompt_text for p in pairs]


def test_pretraining_pairs_vary_in_size(small_world):
    catalog, seqs, vocab = small_world
    pre = pretraining_pairs(seqs, catalog, vocab, copies=2, min_candidates=2)
    assert len(pre) == 2 * len(seqs)
    sizes = {len(p.candidates) for p in pre}
    assert min(sizes) >= 2 and max(sizes) <= N_CANDIDATES and len(sizes) > 3
    for p in pre:
        assert p.truth in p.candidates and not set(p.candidates) & set(p.items)
