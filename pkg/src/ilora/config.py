"""Run configuration: ``key = value`` lines grouped under ``[section]`` headers.

Top-level keys (before any header) belong to the ``run`` section. Unknown
sections or keys are rejected so that typos surface at parse time.
"""
from __future__ import annotations

import dataclasses
import hashlib
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class PathsSection:
    output: str = ""
    catalog: str = ""
    interactions: str = ""


@dataclass
class SyntheticSection:
    num_regimes: int = 4
    items_per_regime: int = 40
    users_per_regime: int = 300
    seq_len_min: int = 4
    seq_len_max: int = 10
    cross_regime_prob: float = 0.05
    popularity_skew: float = 1.0
    test_frac: float = 0.1


@dataclass
class SeqRecSection:
    dim: int = 64
    n_blocks: int = 2
    n_heads: int = 2
    max_seq_len: int = 50
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 30
    weight_decay: float = 0.0


@dataclass
class LMSection:
    d_model: int = 256
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 1024
    context: int = 512
    template: str = ("this user has watched {history} in the previous. recommend the next item "
                     "from the following candidates: {candidates}. answer:")


@dataclass
class PretrainSection:
    steps: int = 1200
    batch_size: int = 8
    max_lr: float = 2e-3
    warmup_steps: int = 50
    prompt_loss: bool = False
    copies: int = 3
    min_candidates: int = 2


@dataclass
class AdapterSection:
    r: int = 8
    alpha: float = 16.0
    k_experts: int = 4
    targets: tuple[str, ...] = ("q", "v")
    gate_sharing: str = "shared"
    temperature: float = 1.0
    gate_signal: str = "sequence"
    projector: str = "linear"


@dataclass
class FinetuneSection:
    mode: str = "ilora"
    k_sweep: tuple[int, ...] = ()
    steps: int = 1000
    batch_size: int = 8
    max_lr: float = 2e-4
    warmup_steps: int = 50
    floor_lr: float = 0.0
    weight_decay: float = 0.0
    ckpt_every: int = 100


@dataclass
class EvalSection:
    max_new: int = 8
    n_eval: int = 0  # 0 means the whole test split
    batch_size: int = 32


@dataclass
class AnalysisSection:
    clusters: int = 8
    granularity: str = "per-cluster"
    group_by: str = "cluster"
    per_half: int = 4
    modules: tuple[str, ...] = ("q", "v")
    capture: bool = True
    n_attention_rows: int = 10


@dataclass
class RunConfig:
    seed: int = 0
    paths: PathsSection = field(default_factory=PathsSection)
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)
    seqrec: SeqRecSection = field(default_factory=SeqRecSection)
    lm: LMSection = field(default_factory=LMSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    adapter: AdapterSection = field(default_factory=AdapterSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    eval: EvalSection = field(default_factory=EvalSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)

    @property
    def output_dir(self) -> Path:
        return Path(os.environ.get("ILORA_OUT") or self.paths.output)

    @property
    def uses_synthetic(self) -> bool:
        return not self.paths.catalog

    def sweep(self) -> tuple[int, ...]:
        return self.finetune.k_sweep or (self.adapter.k_experts,)

    def hash(self) -> str:
        return hashlib.sha256(dump_config(self).encode("utf-8")).hexdigest()[:16]


SECTIONS = [f.name for f in dataclasses.fields(RunConfig) if f.name != "seed"]
REQUIRED = {("run", "seed"), ("paths", "output")}


def _coerce(raw: str, typ, where: str):
    origin = typing.get_origin(typ)
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
        if origin is tuple:
            inner = typing.get_args(typ)[0]
            items = [x.strip() for x in raw.split(",") if x.strip()]
            return tuple(_coerce(x, inner, where) for x in items)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {getattr(typ, '__name__', typ)}") from None
    raise ConfigError(f"{where}: unsupported type {typ}")


def _field_types(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _section_obj(cfg: RunConfig, section: str):
    return getattr(cfg, section)


def set_key(cfg: RunConfig, section: str, key: str, raw: str, where: str) -> None:
    if section == "run":
        if key != "seed":
            raise ConfigError(f"{where}: unknown top-level key {key!r}")
        cfg.seed = _coerce(raw, int, where)
        return
    if section not in SECTIONS:
        raise ConfigError(f"{where}: unknown section [{section}]")
    obj = _section_obj(cfg, section)
    types = _field_types(type(obj))
    if key not in types:
        raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
    setattr(obj, key, _coerce(raw, types[key], where))


def resolve_section(key: str) -> str:
    """Section owning a bare key; ambiguous or unknown keys must be written section.key."""
    if key == "seed":
        return "run"
    owners = [s for s in SECTIONS if key in _field_types(type(getattr(RunConfig(), s)))]
    if len(owners) != 1:
        where = f"is in {', '.join(owners)}" if owners else "is not a config key"
        raise ConfigError(f"override {key!r} {where}; write it as section.key")
    return owners[0]


def parse_text(text: str, source: str = "<config>", check_paths: bool = True) -> RunConfig:
    cfg = RunConfig()
    section = "run"
    seen: dict[tuple[str, str], int] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        where = f"{source}:{lineno}"
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"{where}: unknown section [{section}]")
            continue
        if "=" not in stripped:
            raise ConfigError(f"{where}: expected 'key = value'")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if (section, key) in seen:
            raise ConfigError(f"{where}: key {key!r} already set on line {seen[(section, key)]}")
        seen[(section, key)] = lineno
        set_key(cfg, section, key, raw, where)
    for sec, key in sorted(REQUIRED):
        if (sec, key) not in seen:
            label = key if sec == "run" else f"[{sec}] {key}"
            raise ConfigError(f"{source}: missing required key {label}")
    validate(cfg, source, seen, check_paths)
    return cfg


def validate(cfg: RunConfig, source: str = "<config>", seen: dict | None = None,
             check_paths: bool = True) -> None:
    def at(section, key):
        line = (seen or {}).get((section, key))
        return f"{source}:{line}" if line else source

    ad = cfg.adapter
    for key, ks in (("k_experts", (ad.k_experts,)), ("k_sweep", cfg.finetune.k_sweep)):
        for k in ks:
            if k < 1 or ad.r % k:
                sec = "adapter" if key == "k_experts" else "finetune"
                raise ConfigError(f"{at(sec, key)}: {key} K={k} does not divide rank r={ad.r}")
    if not 1 <= cfg.pretrain.min_candidates <= 21:
        raise ConfigError(f"{at('pretrain', 'min_candidates')}: must be between 1 and 21")
    if cfg.finetune.mode not in ("lora", "ilora", "uniform-lora", "both"):
        raise ConfigError(f"{at('finetune', 'mode')}: mode must be lora, ilora or both")
    if ad.gate_sharing not in ("shared", "per-layer"):
        raise ConfigError(f"{at('adapter', 'gate_sharing')}: expected shared or per-layer")
    if ad.gate_signal not in ("sequence", "random", "token-collapsed"):
        raise ConfigError(f"{at('adapter', 'gate_signal')}: expected sequence, random or token-collapsed")
    if cfg.analysis.granularity not in ("per-cluster", "per-sequence"):
        raise ConfigError(f"{at('analysis', 'granularity')}: expected per-cluster or per-sequence")
    if cfg.analysis.group_by not in ("cluster", "regime"):
        raise ConfigError(f"{at('analysis', 'group_by')}: expected cluster or regime")
    if bool(cfg.paths.catalog) != bool(cfg.paths.interactions):
        raise ConfigError(f"{source}: [paths] catalog and interactions must be given together")
    if check_paths:
        for key in ("catalog", "interactions"):
            p = getattr(cfg.paths, key)
            if p and not Path(p).is_file():
                raise ConfigError(f"{at('paths', key)}: {key} file {p!r} does not exist")


def parse_config(path: str | os.PathLike, overrides: list[str] = (), check_paths: bool = True) -> RunConfig:
    """Read and validate a config file, then apply ``section.key=value`` overrides."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_text(text, str(path), check_paths=False)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, raw = item.split("=", 1)
        section, _, key = dotted.rpartition(".")
        set_key(cfg, section or resolve_section(key), key, raw, f"override {dotted}")
    validate(cfg, str(path), check_paths=check_paths)
    return cfg


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    lines = [f"seed = {cfg.seed}"]
    for section in SECTIONS:
        obj = _section_obj(cfg, section)
        lines.append("")
        lines.append(f"[{section}]")
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"
