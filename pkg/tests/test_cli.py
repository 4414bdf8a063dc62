import json

import pytest

from dmt import cli
from dmt import experiments as ex
from dmt.checkpoint import load
from dmt.variational import DivergenceError

TINY = """\
# tiny end-to-end config
task = ambiguous-lexicon
num_symbols = 8
train_size = 60
test_size = 6
vocab_size = 40
num_layers = 2
d_model = 8
num_heads = 2
d_ff = 16
steps = 20
warmup = 5
epochs = 1
G = 3
beam_size = 2
selection = encdec
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return p


def run(*args):
    return cli.run([str(a) for a in args])


def test_parse_config_types_comments_and_overrides():
    cfg = ex.parse_config("d_model = 16 # comment\nshared_embeddings=true\nl2=1e4\n",
                          overrides={"seed": 7}, name="x")
    assert (cfg.d_model, cfg.shared_embeddings, cfg.l2, cfg.seed, cfg.name) == (16, True, 1e4, 7, "x")
    assert "d_model=16" in cfg.echo()


@pytest.mark.parametrize("text", ["bogus=1", "d_model=abc", "no equals sign", "d_model=30\nnum_heads=4",
                                  "selection=attention", "shared_embeddings=maybe"])
def test_bad_configs_rejected(text):
    with pytest.raises(ex.ConfigError):
        ex.parse_config(text)


def test_selection_presets():
    kinds, layers = ex.selection_spec("decoder13")
    assert layers == (1, 2, 3) and "enc-dec-attn" in kinds and "enc-ffn" not in kinds
    assert set(ex.selection_spec("encdec")[0]) >= {"enc-embed", "dec-ffn"}
    assert ex.selection_spec("dec-ffn, enc-dec-attn") == (("dec-ffn", "enc-dec-attn"), None)


def test_bad_key_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("flux_capacitor=3\n")
    assert run("pretrain", "--config", p) == 2
    assert "flux_capacitor" in capsys.readouterr().err


def test_missing_checkpoint_exits_2(cfg_path, tmp_path):
    assert run("finetune", "--config", cfg_path, "--out", tmp_path / "empty") == 2
    assert run("evaluate", "--config", cfg_path, "--out", tmp_path / "empty") == 2


def test_divergence_exits_3(cfg_path, monkeypatch):
    def boom(cfg):
        raise DivergenceError("loss became nan")
    monkeypatch.setattr(ex, "cmd_pretrain", boom)
    assert run("pretrain", "--config", cfg_path) == 3


def _pipeline(cfg_path, out):
    assert run("pretrain", "--config", cfg_path, "--out", out) == 0
    assert run("finetune", "--config", cfg_path, "--out", out, "--l2", "100") == 0
    assert run("generate", "--config", cfg_path, "--out", out) == 0
    assert run("evaluate", "--config", cfg_path, "--out", out) == 0
    assert run("sweep", "--config", cfg_path, "--out", out, "--l2", "10,1000",
               "--selection", "decoder;encdec") == 0
    assert run("analyze", "--config", cfg_path, "--out", out) == 0


def test_full_pipeline_outputs_and_determinism(cfg_path, tmp_path, capsys):
    a = tmp_path / "a"
    _pipeline(cfg_path, a)
    first = {p.name: p.read_bytes() for p in a.iterdir()}
    _pipeline(cfg_path, a)
    capsys.readouterr()

    names = sorted(p.name for p in a.iterdir())
    assert names == sorted([
        "tiny.dmt1", "tiny.vocab", "tiny.train.csv", "tiny.ft.dmt1", "tiny.ft.csv",
        "tiny.group1.txt", "tiny.group2.txt", "tiny.group3.txt", "tiny.groups.jsonl",
        "tiny.metrics.json", "tiny.sweep.csv", "tiny.analysis.txt", "tiny.analysis.csv"])
    for name in names:
        assert (a / name).read_bytes() == first[name], name

    train_csv = (a / "tiny.train.csv").read_text().splitlines()
    assert train_csv[0].startswith("# config: ") and train_csv[1] == "step,loss"

    sweep = [l for l in (a / "tiny.sweep.csv").read_text().splitlines() if not l.startswith("#")]
    assert sweep[0] == "selection,l2,bleu,pairwise_bleu"
    assert [l.split(",")[:2] for l in sweep[1:]] == [
        ["decoder", "10"], ["decoder", "1000"], ["encdec", "10"], ["encdec", "1000"]]

    metrics = json.loads((a / "tiny.metrics.json").read_text())
    assert set(metrics) >= {"bleu", "pairwise_bleu", "precisions", "bp", "baseline_bleu", "config"}
    assert len(metrics["group_bleu"]) == 3

    manifest = [json.loads(l) for l in (a / "tiny.groups.jsonl").read_text().splitlines()]
    assert manifest[0]["config"]["G"] == 3
    assert [(m["g"], m["seed"], m["beam_size"]) for m in manifest[1:]] == [(1, 2, 2), (2, 3, 2), (3, 4, 2)]
    assert len((a / "tiny.group1.txt").read_text().splitlines()) == 6

    pre, _ = load(a / "tiny.dmt1")
    ft, meta = load(a / "tiny.ft.dmt1")
    assert meta["stage"] == "finetuned"
    for k, v in pre.items():
        assert ft[k].tobytes() == v.tobytes()
    assert any(k.startswith("gate/enc-self-attn/") for k in ft)

    csv = (a / "tiny.analysis.csv").read_text().splitlines()
    assert csv[1] == "kind,layer,mean_p,pruned_bleu"
    rho_kinds = {l.split(",")[0] for l in csv if l.startswith("rho:")}
    assert {"rho:enc-self-attn", "rho:dec-self-attn", "rho:enc-dec-attn"} <= rho_kinds


def test_sweep_needs_two_points(cfg_path, tmp_path):
    assert run("pretrain", "--config", cfg_path, "--out", tmp_path) == 0
    assert run("sweep", "--config", cfg_path, "--out", tmp_path, "--l2", "10") == 2


def test_failed_sweep_point_is_recorded(cfg_path, tmp_path, monkeypatch):
    assert run("pretrain", "--config", cfg_path, "--out", tmp_path) == 0
    real = ex.run_point

    def flaky(model, vocab, train, test, cfg, baseline_bleu=None):
        if cfg.l2 == 1000:
            raise FloatingPointError("diverged")
        return real(model, vocab, train, test, cfg, baseline_bleu)

    monkeypatch.setattr(ex, "run_point", flaky)
    assert run("sweep", "--config", cfg_path, "--out", tmp_path, "--l2", "10,1000,100000") == 0
    rows = (tmp_path / "tiny.sweep.csv").read_text().splitlines()[-3:]
    assert rows[1] == "encdec,1000,ERROR,ERROR"
    assert "ERROR" not in rows[0] and "ERROR" not in rows[2]
