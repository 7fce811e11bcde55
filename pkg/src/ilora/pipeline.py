"""Stages of the end-to-end run, each writing artifacts plus a manifest.

A stage's manifest records a hash of the config sections it reads together
with the hashes of its upstream stages. A stage is skipped when its manifest
already carries the current hash, unless ``force`` is set.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .adapters import AdapterShapeConfig, count_trainable
from .analysis import (GradientCapture, GradientRecord, block_contrast, cluster_sequences, evaluate,
                       export_attention, export_curves, export_heatmap, grad_similarity, split_groups)
from .config import RunConfig, dump_config
from .core import Tape, checkpoint, grad_check, make_rng, no_tape
from .core.rng import STREAM_CLUSTER
from .data import (SyntheticSpec, corpus_vocab, gen_synthetic, item_regime, load_catalog,
                   load_interactions, read_pairs_jsonl, render_pairs, save_catalog, save_interactions,
                   pretraining_pairs, split_sequences, user_regime, write_pairs_jsonl)
from .lm import AdaptedLM, AdapterConfig, FinetuneConfig, LMConfig, ToyLM, finetune, pretrain_lm
from .lm.model import BehaviorProjector
from .seqrec import SeqRecConfig, SeqRecModel, SeqRecTrainConfig, sr_train

log = logging.getLogger(__name__)


class DependencyError(RuntimeError):
    pass


class GradCheckFailure(RuntimeError):
    pass


GRAD_CHECK_TOL = 1e-4


# sections each stage reads; upstream hashes are folded in separately
STAGES = {
    "gen-data": ((), ("paths", "synthetic")),
    "train-sr": (("gen-data",), ("seqrec",)),
    "render-pairs": (("gen-data",), ("lm", "seqrec")),
    "pretrain-lm": (("render-pairs", "train-sr"), ("lm", "pretrain", "adapter")),
    "finetune": (("pretrain-lm",), ("adapter", "finetune", "analysis")),
    "evaluate": (("finetune",), ("eval",)),
    "analyze-gradients": (("finetune",), ("analysis",)),
    "export-attention": (("finetune",), ("analysis", "eval")),
    "grad-check": ((), ("adapter",)),
    "param-count": ((), ("adapter", "lm", "seqrec", "finetune")),
}
PIPELINE = ("gen-data", "train-sr", "render-pairs", "pretrain-lm", "finetune", "evaluate",
            "analyze-gradients")


def versions() -> dict[str, str]:
    return {"ilora": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def run_names(cfg: RunConfig) -> list[str]:
    """Fine-tune runs for the configured mode; ``both`` pairs LoRA with every ilora K."""
    mode = cfg.finetune.mode
    names = ["lora"] if mode in ("lora", "uniform-lora", "both") else []
    if mode in ("ilora", "both"):
        names += [f"ilora_k{k}" for k in cfg.sweep()]
    return names


@dataclass
class Workspace:
    cfg: RunConfig

    @property
    def root(self) -> Path:
        return self.cfg.output_dir

    def dir(self, stage: str) -> Path:
        return self.root / stage

    def manifest_path(self, stage: str) -> Path:
        return self.dir(stage) / "manifest.json"

    def manifest(self, stage: str) -> dict | None:
        p = self.manifest_path(stage)
        if not p.is_file():
            return None
        return json.loads(p.read_text(encoding="utf-8"))

    def stage_hash(self, stage: str) -> str:
        deps, sections = STAGES[stage]
        h = hashlib.sha256()
        h.update(f"seed={self.cfg.seed}\n".encode())
        for s in sections:
            obj = getattr(self.cfg, s)
            h.update(json.dumps(dataclasses.asdict(obj), sort_keys=True).encode())
        for d in deps:
            m = self.require(d)
            h.update(m["stage_hash"].encode())
        return h.hexdigest()[:16]

    def require(self, stage: str) -> dict:
        m = self.manifest(stage)
        if m is None:
            raise DependencyError(f"missing artifact {self.manifest_path(stage)}: "
                                  f"run the {stage} stage first")
        for name in m["outputs"]:
            if not (self.dir(stage) / name).is_file():
                raise DependencyError(f"missing artifact {self.dir(stage) / name} listed by {stage}")
        return m

    def is_done(self, stage: str) -> bool:
        m = self.manifest(stage)
        return m is not None and m["stage_hash"] == self.stage_hash(stage)

    def finish(self, stage: str, outputs: list[str], extra: dict | None = None) -> dict:
        d = self.dir(stage)
        m = {"stage": stage, "stage_hash": self.stage_hash(stage), "config_hash": self.cfg.hash(),
             "seed": self.cfg.seed, "versions": versions(),
             "outputs": {name: _sha(d / name) for name in sorted(outputs)}}
        if extra:
            m.update(extra)
        _write_json(self.manifest_path(stage), m)
        return m


# ---------------------------------------------------------------------- loaders


def synthetic_spec(cfg: RunConfig) -> SyntheticSpec:
    s = cfg.synthetic
    return SyntheticSpec(s.num_regimes, s.items_per_regime, s.users_per_regime,
                         (s.seq_len_min, s.seq_len_max), s.cross_regime_prob, s.popularity_skew,
                         cfg.seed)


def load_data(ws: Workspace):
    d = ws.dir("gen-data")
    catalog = load_catalog(d / "catalog.tsv")
    train = load_interactions(d / "train.tsv", catalog)
    test = load_interactions(d / "test.tsv", catalog)
    return catalog, train, test


def load_sr(ws: Workspace, n_items: int) -> SeqRecModel:
    s = ws.cfg.seqrec
    sr = SeqRecModel(n_items, SeqRecConfig(s.dim, s.n_blocks, s.n_heads, s.max_seq_len), ws.cfg.seed)
    sr.load_state(checkpoint.load(ws.dir("train-sr") / "model.ckpt"))
    sr.freeze()
    return sr


def lm_config(cfg: RunConfig) -> LMConfig:
    m = cfg.lm
    return LMConfig(m.d_model, m.n_layers, m.n_heads, m.d_ff, m.context)


def adapter_config(cfg: RunConfig, k: int | None = None) -> AdapterConfig:
    a = cfg.adapter
    return AdapterConfig(a.r, a.alpha, k or a.k_experts, tuple(a.targets), a.gate_sharing,
                         a.temperature, a.gate_signal, a.projector)


def load_base(ws: Workspace):
    """Catalog, vocab, frozen recommender, frozen LM and pretrained projector state."""
    catalog, _, _ = load_data(ws)
    vocab = corpus_vocab(catalog, ws.cfg.lm.template)
    sr = load_sr(ws, catalog.size)
    state = checkpoint.load(ws.dir("pretrain-lm") / "base.ckpt")
    lm = ToyLM(len(vocab), lm_config(ws.cfg), ws.cfg.seed)
    lm.load_state(state)
    lm.freeze()
    return catalog, vocab, sr, lm, state


def load_pairs(ws: Workspace, split: str, vocab, sr):
    return read_pairs_jsonl(ws.dir("render-pairs") / f"{split}.jsonl", vocab, sr)


def build_model(ws: Workspace, run: str, lm, sr, vocab, base_state) -> AdaptedLM:
    cfg = ws.cfg
    if run == "base":
        mode, k = "frozen", None
    elif run == "lora":
        mode, k = "uniform-lora", None
    else:
        mode, k = "ilora", int(run.split("_k")[1])
    model = AdaptedLM(lm, sr, vocab, mode, adapter_config(cfg, k), cfg.seed)
    model.projector.load_state(base_state)
    return model


# ---------------------------------------------------------------------- stages


def stage_gen_data(ws: Workspace) -> dict:
    cfg, d = ws.cfg, ws.dir("gen-data")
    d.mkdir(parents=True, exist_ok=True)
    extra = {}
    if cfg.uses_synthetic:
        spec = synthetic_spec(cfg)
        catalog, seqs = gen_synthetic(spec)
        regimes = {s.user_id: user_regime(spec, s.user_id) for s in seqs}
        _write_csv(d / "regimes.csv", ["user", "regime"], [[u, g] for u, g in sorted(regimes.items())])
        extra["synthetic"] = True
    else:
        catalog = load_catalog(cfg.paths.catalog)
        seqs = load_interactions(cfg.paths.interactions, catalog)
        extra["synthetic"] = False
    train, test = split_sequences(seqs, cfg.synthetic.test_frac, cfg.seed)
    save_catalog(d / "catalog.tsv", catalog)
    save_interactions(d / "train.tsv", train)
    save_interactions(d / "test.tsv", test)
    outputs = ["catalog.tsv", "train.tsv", "test.tsv"] + (["regimes.csv"] if cfg.uses_synthetic else [])
    extra.update(n_items=catalog.size, n_train=len(train), n_test=len(test))
    return ws.finish("gen-data", outputs, extra)


def stage_train_sr(ws: Workspace) -> dict:
    cfg, d = ws.cfg, ws.dir("train-sr")
    catalog, train, _ = load_data(ws)
    s = cfg.seqrec
    sr = SeqRecModel(catalog.size, SeqRecConfig(s.dim, s.n_blocks, s.n_heads, s.max_seq_len), cfg.seed)
    sr, curve = sr_train(sr, train, SeqRecTrainConfig(s.lr, s.batch_size, s.epochs, s.weight_decay,
                                                      cfg.seed))
    checkpoint.save(d / "model.ckpt", sr.state_dict())
    _write_csv(d / "curve.csv", ["epoch", "loss"], [[i + 1, v] for i, v in enumerate(curve)])
    return ws.finish("train-sr", ["model.ckpt", "curve.csv"], {"final_loss": curve[-1] if curve else None})


def stage_render_pairs(ws: Workspace) -> dict:
    cfg, d = ws.cfg, ws.dir("render-pairs")
    catalog, train, test = load_data(ws)
    vocab = corpus_vocab(catalog, cfg.lm.template)
    d.mkdir(parents=True, exist_ok=True)
    counts = {}
    for split, seqs in (("train", train), ("test", test)):
        pairs = render_pairs(seqs, catalog, None, vocab, cfg.lm.template, cfg.seed, cfg.lm.context,
                             cfg.seqrec.max_seq_len)
        write_pairs_jsonl(d / f"{split}.jsonl", pairs)
        counts[split] = len(pairs)
    (d / "vocab.txt").write_text("\n".join(vocab.tokens) + "\n", encoding="utf-8")
    return ws.finish("render-pairs", ["train.jsonl", "test.jsonl", "vocab.txt"],
                     {"vocab_size": len(vocab), "pairs": counts})


def stage_pretrain_lm(ws: Workspace) -> dict:
    cfg, d = ws.cfg, ws.dir("pretrain-lm")
    catalog, train, _ = load_data(ws)
    vocab = corpus_vocab(catalog, cfg.lm.template)
    sr = load_sr(ws, catalog.size)
    lm = ToyLM(len(vocab), lm_config(cfg), cfg.seed)
    model = AdaptedLM(lm, sr, vocab, "frozen", adapter_config(cfg), cfg.seed)
    p = cfg.pretrain
    pairs = pretraining_pairs(train, catalog, vocab, cfg.lm.template, cfg.seed, p.copies,
                              p.min_candidates, cfg.seqrec.max_seq_len)
    curve = pretrain_lm(model, pairs,
                        FinetuneConfig(p.steps, p.batch_size, p.max_lr, p.warmup_steps, seed=cfg.seed,
                                       prompt_loss=p.prompt_loss))
    state = {**lm.state_dict(), **model.projector.state_dict()}
    checkpoint.save(d / "base.ckpt", state)
    _write_csv(d / "curve.csv", ["step", "loss"], [[i + 1, v] for i, v in enumerate(curve)])
    return ws.finish("pretrain-lm", ["base.ckpt", "curve.csv"],
                     {"lm_checksum": lm.checksum(), "final_loss": float(np.mean(curve[-20:]))})


def capture_groups(ws: Workspace, pairs, catalog) -> tuple[dict, dict]:
    """Split-half gradient groups keyed by k-means cluster (or true regime if asked)."""
    a = ws.cfg.analysis
    rng = make_rng(ws.cfg.seed, STREAM_CLUSTER)
    if a.group_by == "regime":
        regimes = read_regimes(ws)
        key = [regimes[p.user] for p in pairs]
    else:
        assign = cluster_sequences([p.z for p in pairs], a.clusters, rng)
        rank = {c: i for i, c in enumerate(assign.display_order)}
        key = [rank[int(c)] for c in assign.labels]
    by: dict[int, list] = {}
    for k, p in zip(key, pairs):
        by.setdefault(int(k), []).append(p)
    by = {k: v for k, v in sorted(by.items()) if len(v) >= 2 * a.per_half}
    return split_groups(by, a.per_half, rng)


def read_regimes(ws: Workspace) -> dict[int, int]:
    path = ws.dir("gen-data") / "regimes.csv"
    if not path.is_file():
        raise DependencyError(f"missing artifact {path}: grouping by regime needs synthetic data")
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    return {int(u): int(g) for u, g in rows}


def _save_records(path: Path, records: list[GradientRecord]) -> None:
    checkpoint.save(path, {f"grad/{r.step}/{r.module_name}/{r.group}": r.vector for r in records})


def _load_records(path: Path) -> list[GradientRecord]:
    out = []
    for name, vec in checkpoint.load(path).items():
        _, step, module, group = name.split("/")
        out.append(GradientRecord(int(step), module, group, vec.reshape(-1)))
    return out


def stage_finetune(ws: Workspace) -> dict:
    cfg, d = ws.cfg, ws.dir("finetune")
    catalog, vocab, sr, lm, base_state = load_base(ws)
    pairs = load_pairs(ws, "train", vocab, sr)
    f = cfg.finetune
    ft = FinetuneConfig(f.steps, f.batch_size, f.max_lr, f.warmup_steps, f.floor_lr, f.weight_decay,
                        f.ckpt_every, cfg.seed)
    groups, family = capture_groups(ws, pairs, catalog) if cfg.analysis.capture else ({}, {})
    outputs, summary = [], {}
    for run in run_names(cfg):
        rd = d / run
        rd.mkdir(parents=True, exist_ok=True)
        model = build_model(ws, run, lm, sr, vocab, base_state)
        before = model.base_checksum()
        capture = GradientCapture(groups, cfg.analysis.granularity,
                                  tuple(cfg.analysis.modules)) if groups else None
        log.info("finetune %s: %d steps on %d pairs", run, f.steps, len(pairs))
        curve = finetune(model, pairs, ft, capture, rd)
        if model.base_checksum() != before:
            raise RuntimeError("frozen weights changed during fine-tuning")
        checkpoint.save(rd / "final.ckpt", model.state_dict())
        _write_csv(rd / "curve.csv", ["step", "loss"], [[i + 1, v] for i, v in enumerate(curve)])
        outputs += [f"{run}/final.ckpt", f"{run}/curve.csv"]
        outputs += [f"{run}/{p.name}" for p in sorted(rd.glob("step_*.ckpt"))]
        if capture is not None:
            _save_records(rd / "grads.ckpt", capture.records)
            outputs.append(f"{run}/grads.ckpt")
        summary[run] = {"final_loss": float(np.mean(curve[-20:]))}
    if groups:
        _write_json(d / "groups.json", {"family": family,
                                        "users": {g: [p.user for p in ps] for g, ps in groups.items()}})
        outputs.append("groups.json")
    return ws.finish("finetune", outputs, {"runs": summary})


def _eval_pairs(ws: Workspace, vocab, sr):
    pairs = load_pairs(ws, "test", vocab, sr)
    n = ws.cfg.eval.n_eval
    return pairs[:n] if n else pairs


def stage_evaluate(ws: Workspace) -> dict:
    cfg, d = ws.cfg, ws.dir("evaluate")
    fm = ws.require("finetune")
    catalog, vocab, sr, lm, base_state = load_base(ws)
    pairs = _eval_pairs(ws, vocab, sr)
    rows, outputs, curves = [], [], {}
    for run in ["base"] + list(fm["runs"]):
        model = build_model(ws, run, lm, sr, vocab, base_state)
        if run != "base":
            model.load_state(checkpoint.load(ws.dir("finetune") / run / "final.ckpt"))
            with open(ws.dir("finetune") / run / "curve.csv", encoding="utf-8") as fh:
                curves[run] = [float(r[1]) for r in list(csv.reader(fh))[1:]]
        report = evaluate(model, pairs, catalog, cfg.eval.max_new, cfg.eval.batch_size)
        (d / run).mkdir(parents=True, exist_ok=True)
        report.dump(d / run / "metrics.json")
        outputs.append(f"{run}/metrics.json")
        rows.append([run, report.hit_ratio_1, report.valid_ratio, report.n_eval])
        log.info("%s: HitRatio@1 %.4f ValidRatio %.4f", run, report.hit_ratio_1, report.valid_ratio)
    _write_csv(d / "summary.csv", ["run", "hit_ratio_1", "valid_ratio", "n_eval"], rows)
    outputs.append("summary.csv")
    if curves:
        export_curves(curves, d / "loss_curves.csv", d / "loss_curves.svg")
        outputs += ["loss_curves.csv", "loss_curves.svg"]
    return ws.finish("evaluate", outputs, {"metrics": {r[0]: {"hit_ratio_1": r[1], "valid_ratio": r[2]}
                                                      for r in rows}})


def stage_analyze_gradients(ws: Workspace) -> dict:
    d = ws.dir("analyze-gradients")
    fm = ws.require("finetune")
    groups_path = ws.dir("finetune") / "groups.json"
    if not groups_path.is_file():
        raise DependencyError(f"missing artifact {groups_path}: fine-tune with analysis.capture = true")
    family = json.loads(groups_path.read_text(encoding="utf-8"))["family"]
    labels = sorted(family, key=lambda g: (int(family[g]), g))
    outputs, contrast = [], {}
    for run in fm["runs"]:
        records = _load_records(ws.dir("finetune") / run / "grads.ckpt")
        h = grad_similarity(records, labels=labels)
        export_heatmap(h, d / run / "heatmap.csv", d / run / "heatmap.svg")
        within, cross = block_contrast(h, family)
        contrast[run] = {"within": within, "cross": cross, "gap": within - cross,
                         "undefined": h.undefined}
        outputs += [f"{run}/heatmap.csv", f"{run}/heatmap.svg"]
        log.info("%s: within %.4f cross %.4f", run, within, cross)
    _write_json(d / "contrast.json", contrast)
    outputs.append("contrast.json")
    return ws.finish("analyze-gradients", outputs, {"contrast": contrast})


def stage_export_attention(ws: Workspace) -> dict:
    cfg, d = ws.cfg, ws.dir("export-attention")
    fm = ws.require("finetune")
    runs = [r for r in fm["runs"] if r.startswith("ilora")]
    if not runs:
        raise DependencyError("export-attention needs an ilora fine-tune run (finetune.mode = ilora)")
    catalog, vocab, sr, lm, base_state = load_base(ws)
    pairs = _eval_pairs(ws, vocab, sr)[:cfg.analysis.n_attention_rows]
    outputs = []
    for run in runs:
        model = build_model(ws, run, lm, sr, vocab, base_state)
        model.load_state(checkpoint.load(ws.dir("finetune") / run / "final.ckpt"))
        with no_tape():
            omega = model.expert_weights(pairs)[0].value
        rows = [(f"user {p.user}", w) for p, w in zip(pairs, omega)]
        export_attention(rows, d / run / "experts.csv", d / run / "experts.svg")
        outputs += [f"{run}/experts.csv", f"{run}/experts.svg"]
    return ws.finish("export-attention", outputs)


def stage_grad_check(ws: Workspace) -> dict:
    err = run_grad_check(ws.cfg)
    report = {"max_relative_error": float(err), "threshold": GRAD_CHECK_TOL, "passed": bool(err < GRAD_CHECK_TOL)}
    print(f"max relative error: {err:.3e}")
    if err >= GRAD_CHECK_TOL:
        raise GradCheckFailure(f"gradient check failed: max relative error {err:.3e} >= {GRAD_CHECK_TOL}")
    _write_json(ws.dir("grad-check") / "report.json", report)
    return ws.finish("grad-check", ["report.json"], report)


def stage_param_count(ws: Workspace) -> dict:
    rows = param_table(ws.cfg)
    header = list(rows[0])
    _write_csv(ws.dir("param-count") / "table.csv", header, [[r[h] for h in header] for r in rows])
    print(f"{'variant':12} {'K':>3} {'adapter':>9} {'projector':>9} {'gate':>6} {'total':>9} "
          f"{'gate/adapter+proj':>18}")
    for r in rows:
        print(f"{r['variant']:12} {r['k']:>3} {r['adapter']:>9} {r['projector']:>9} {r['gate']:>6} "
              f"{r['total']:>9} {100 * r['relative_increase']:>17.3f}%")
    return ws.finish("param-count", ["table.csv"])


STAGE_FUNCS = {
    "gen-data": stage_gen_data,
    "train-sr": stage_train_sr,
    "render-pairs": stage_render_pairs,
    "pretrain-lm": stage_pretrain_lm,
    "finetune": stage_finetune,
    "evaluate": stage_evaluate,
    "analyze-gradients": stage_analyze_gradients,
    "export-attention": stage_export_attention,
    "grad-check": stage_grad_check,
    "param-count": stage_param_count,
}


def run_stage(ws: Workspace, stage: str, force: bool = False) -> tuple[bool, dict]:
    """Run one stage; returns (ran, manifest). Completed stages are skipped unless forced."""
    deps, _ = STAGES[stage]
    for dep in deps:
        ws.require(dep)
    if not force and ws.is_done(stage):
        return False, ws.manifest(stage)
    return True, STAGE_FUNCS[stage](ws)


# ---------------------------------------------------------------------- standalone checks


def param_table(cfg: RunConfig) -> list[dict]:
    a, m = cfg.adapter, cfg.lm
    rows = []
    for k in cfg.sweep():
        shape = AdapterShapeConfig(m.n_layers, m.d_model, m.d_ff, tuple(a.targets), a.r, k,
                                   cfg.seqrec.dim, a.projector, a.gate_sharing)
        for variant in ("uniform-lora", "ilora"):
            c = count_trainable(variant, shape)
            rows.append({"variant": variant, "k": k, "adapter": c.adapter, "projector": c.projector,
                         "gate": c.gate, "total": c.total,
                         "relative_increase": c.relative_increase,
                         "adapter_relative_increase": c.adapter_relative_increase})
    return rows


def gradcheck_model(cfg: RunConfig, k: int | None = None):
    """A tiny ilora bundle with every trainable piece nonzero, plus its loss on two pairs."""
    from .data import ItemCatalog, InteractionSequence
    rng = make_rng(cfg.seed, 99)
    k = k or cfg.adapter.k_experts
    titles = {i: f"{'ab'[i % 2]} item {i}" for i in range(1, 31)}
    catalog = ItemCatalog(titles)
    seqs = [InteractionSequence(u, [int(x) for x in rng.choice(30, 3, replace=False) + 1],
                                int(rng.integers(1, 31))) for u in (1, 2)]
    for s in seqs:
        while s.truth in s.items:
            s.truth = s.truth % 30 + 1
    vocab = corpus_vocab(catalog)
    sr = SeqRecModel(30, SeqRecConfig(dim=8, n_blocks=1, n_heads=2, max_seq_len=8), cfg.seed)
    sr.freeze()
    lm = ToyLM(len(vocab), LMConfig(d_model=16, n_layers=2, n_heads=2, d_ff=32, context=128), cfg.seed)
    lm.freeze()
    ad = adapter_config(cfg, k)
    ad = dataclasses.replace(ad, r=max(ad.r, k), alpha=ad.alpha)
    model = AdaptedLM(lm, sr, vocab, "ilora", ad, cfg.seed)
    pairs = render_pairs(seqs, catalog, sr, vocab, context=128, max_history=8)
    for p in model.trainable_params():
        p.value[...] = rng.normal(0.0, 0.3, size=p.value.shape)
    return model, pairs


def run_grad_check(cfg: RunConfig, max_entries: int | None = 40) -> float:
    model, pairs = gradcheck_model(cfg)
    params = model.trainable_params()
    err = grad_check(lambda: model.batch_loss(pairs), params, h=1e-5, max_entries=max_entries,
                     rng=make_rng(cfg.seed, 98))
    return err


def write_text_report(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


__all__ = ["DependencyError", "GradCheckFailure", "PIPELINE", "STAGES", "Workspace", "dump_config",
           "param_table", "run_grad_check", "run_stage", "run_names"]
