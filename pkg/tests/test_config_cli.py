import json

import pytest

from ilora.cli import main
from ilora.config import ConfigError, dump_config, parse_config, parse_text
from ilora.pipeline import DependencyError, Workspace, run_names, run_stage

TINY = """\
seed = 3

[paths]
output = {out}

[synthetic]
num_regimes = 2
items_per_regime = 20
users_per_regime = 12
seq_len_max = 6

[seqrec]
dim = 8
n_blocks = 1
max_seq_len = 8
epochs = 2
batch_size = 16

[lm]
d_model = 16
n_layers = 1
n_heads = 2
d_ff = 32
context = 128

[pretrain]
steps = 4
batch_size = 4

[adapter]
r = 4
k_experts = 2

[finetune]
mode = both
steps = 4
batch_size = 4
ckpt_every = 2

[eval]
max_new = 4
n_eval = 4

[analysis]
clusters = 2
per_half = 2
n_attention_rows = 3
"""


def write_cfg(tmp_path, text=None, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text if text is not None else TINY.format(out=tmp_path / "out"), encoding="utf-8")
    return path


# ---------------------------------------------------------------- config


def test_minimal_config_gets_defaults():
    cfg = parse_text("seed = 1\n[paths]\noutput = /tmp/x\n")
    assert cfg.adapter.k_experts == 4 and cfg.adapter.r == 8 and cfg.analysis.clusters == 8
    assert cfg.uses_synthetic and cfg.sweep() == (4,)


@pytest.mark.parametrize("text, pattern", [
    ("seed = 1\n[paths]\noutput = o\n[adapter]\nk_experts = 3\n", r":5: k_experts K=3 does not divide rank r=8"),
    ("seed = 1\n[paths]\noutput = o\n[adapter]\nrank = 8\n", r":5: unknown key 'rank'"),
    ("seed = 1\n[paths]\noutput = o\n[adapter]\nr = eight\n", r":5: cannot read 'eight' as int"),
    ("seed = 1\n[paths]\noutput = o\n[lm]\nd_model = 8\nd_model = 8\n", r":6: key 'd_model' already set"),
    ("seed = 1\n", "missing required key \\[paths\\] output"),
    ("[paths]\noutput = o\n", "missing required key seed"),
    ("seed = 1\n[paths]\noutput = o\n[gpu]\n", r":4: unknown section"),
    ("seed = 1\n[paths]\noutput = o\ncatalog = c.tsv\n", "must be given together"),
    ("seed = 1\n[paths]\noutput = o\n[finetune]\nk_sweep = 1, 3\n", "K=3 does not divide"),
])
def test_config_errors(text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        parse_text(text, "run.cfg")


def test_missing_data_files_reported(tmp_path):
    text = "seed = 1\n[paths]\noutput = o\ncatalog = nope.tsv\ninteractions = nope2.tsv\n"
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config(write_cfg(tmp_path, text))


def test_dump_parse_round_trip():
    cfg = parse_text(TINY.format(out="/tmp/o"))
    again = parse_text(dump_config(cfg))
    assert again == cfg and dump_config(again) == dump_config(cfg)


def test_overrides_and_env(tmp_path, monkeypatch):
    path = write_cfg(tmp_path)
    cfg = parse_config(path, ["adapter.k_experts=4", "finetune.max_lr=0.01", "clusters=5", "seed=9"])
    assert cfg.adapter.k_experts == 4 and cfg.seed == 9 and cfg.analysis.clusters == 5
    assert cfg.finetune.max_lr == 0.01 and cfg.pretrain.max_lr != 0.01
    with pytest.raises(ConfigError, match="section.key"):
        parse_config(path, ["max_lr=3"])
    monkeypatch.setenv("ILORA_OUT", str(tmp_path / "elsewhere"))
    assert parse_config(path).output_dir == tmp_path / "elsewhere"


def test_run_names():
    cfg = parse_text(TINY.format(out="o"))
    assert run_names(cfg) == ["lora", "ilora_k2"]
    cfg.finetune.mode, cfg.finetune.k_sweep = "ilora", (1, 2, 4)
    assert run_names(cfg) == ["ilora_k1", "ilora_k2", "ilora_k4"]


# ---------------------------------------------------------------- CLI


def test_dependency_error_names_artifact(tmp_path, capsys):
    assert main(["evaluate", "-c", str(write_cfg(tmp_path))]) == 1
    err = capsys.readouterr().err.strip()
    assert err.count("\n") == 0 and "DependencyError" in err and "finetune" in err
    cfg = parse_config(write_cfg(tmp_path))
    with pytest.raises(DependencyError, match="manifest.json"):
        run_stage(Workspace(cfg), "train-sr")


def test_bad_config_is_one_line_error(tmp_path, capsys):
    path = write_cfg(tmp_path, "seed = 1\n[paths]\noutput = o\n[adapter]\nk_experts = 3\n")
    assert main(["finetune", "-c", str(path)]) == 1
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and "k_experts" in err and ":5:" in err


def test_param_count_table(tmp_path, capsys):
    assert main(["param-count", "-c", str(write_cfg(tmp_path, "seed = 0\n[paths]\noutput = "
                                                             f"{tmp_path / 'pc'}\n"))]) == 0
    out = capsys.readouterr().out
    assert "ilora" in out and "0.521%" in out
    rows = (tmp_path / "pc" / "param-count" / "table.csv").read_text().splitlines()
    assert rows[0].startswith("variant,k,adapter,projector,gate,total")


def test_grad_check_command(tmp_path, capsys):
    path = write_cfg(tmp_path)
    assert main(["grad-check", "-c", str(path)]) == 0
    out = capsys.readouterr().out
    assert "max relative error:" in out
    report = json.loads((tmp_path / "out" / "grad-check" / "report.json").read_text())
    assert report["passed"] and report["max_relative_error"] < 1e-4


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    """The tiny pipeline run twice from the same config into two output directories."""
    base = tmp_path_factory.mktemp("cli")
    path = write_cfg(base)
    outs = []
    mp = pytest.MonkeyPatch()
    for name in ("first", "second"):
        mp.setenv("ILORA_OUT", str(base / name))
        assert main(["all", "-c", str(path)]) == 0
        assert main(["export-attention", "-c", str(path)]) == 0
        outs.append(base / name)
    mp.undo()
    return path, outs


def test_pipeline_outputs(pipeline_runs):
    _, (out, _) = pipeline_runs
    for stage in ("gen-data", "train-sr", "render-pairs", "pretrain-lm", "finetune", "evaluate",
                  "analyze-gradients", "export-attention"):
        m = json.loads((out / stage / "manifest.json").read_text())
        assert m["seed"] == 3 and m["outputs"] and "numpy" in m["versions"]
    assert (out / "finetune" / "lora" / "step_000002.ckpt").is_file()
    assert (out / "evaluate" / "summary.csv").read_text().startswith("run,")
    contrast = json.loads((out / "analyze-gradients" / "contrast.json").read_text())
    assert set(contrast) >= {"lora", "ilora_k2"}
    assert (out / "export-attention" / "ilora_k2" / "experts.svg").is_file()


def test_pipeline_is_deterministic(pipeline_runs):
    _, (a, b) = pipeline_runs
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_rerun_is_noop_unless_forced(pipeline_runs, monkeypatch, capsys):
    path, (out, _) = pipeline_runs
    monkeypatch.setenv("ILORA_OUT", str(out))
    before = (out / "evaluate" / "manifest.json").stat().st_mtime_ns
    assert main(["evaluate", "-c", str(path)]) == 0
    assert "already complete" in capsys.readouterr().out
    assert (out / "evaluate" / "manifest.json").stat().st_mtime_ns == before
    assert main(["evaluate", "-c", str(path), "--force"]) == 0
    assert "done in" in capsys.readouterr().out


def test_changed_config_reruns_stage(pipeline_runs, monkeypatch, capsys):
    path, (_, out) = pipeline_runs
    monkeypatch.setenv("ILORA_OUT", str(out))
    assert main(["evaluate", "-c", str(path), "--eval.max_new=3"]) == 0
    assert "evaluate: done" in capsys.readouterr().out
