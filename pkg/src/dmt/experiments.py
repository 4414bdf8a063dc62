"""Experiment configs and the pipelines behind each CLI subcommand."""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, fields
from pathlib import Path

import torch

from . import checkpoint
from .data import (ParallelCorpus, Vocab, build_vocab, filter_length, make_batches,
                   read_corpus, synth_task_generate, detokenize)
from .decode import decode_corpus, generate_diverse
from .gates import DEC_KINDS, ENC_KINDS, KINDS, gate_arrays, gate_placement, load_gates
from .importance import analyze
from .metrics import corpus_bleu, pairwise_bleu
from .model import Transformer, TransformerConfig
from .train import PretrainConfig, pretrain
from .variational import VariationalConfig, finetune_dropout

log = logging.getLogger(__name__)

PRESETS = {
    "decoder13": (DEC_KINDS, (1, 2, 3)),
    "decoder": (DEC_KINDS, None),
    "encdec": (ENC_KINDS + DEC_KINDS, None),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str = "run"
    out: str = "."
    seed: int = 1
    # data
    task: str = "copy"
    train_size: int = 3000
    test_size: int = 200
    data_seed: int = 1
    num_symbols: int = 40
    gen_min_len: int = 3
    gen_max_len: int = 10
    synonyms_k: int = 3
    ambiguous_fraction: float = 0.5
    train_src: str = ""
    train_tgt: str = ""
    test_src: str = ""
    test_tgt: str = ""
    sentence_max_len: int = 100
    vocab_size: int = 64
    # model
    num_layers: int = 2
    d_model: int = 32
    num_heads: int = 2
    d_ff: int = 64
    model_max_len: int = 256
    label_smoothing: float = 0.1
    dropout: float = 0.1
    shared_embeddings: bool = False
    # pre-training
    steps: int = 3000
    warmup: int = 400
    lr: float = 1.0
    max_tokens: int = 512
    # variational fine-tuning
    l2: float = 1000.0
    selection: str = "decoder"
    temperature: float = 0.1
    init_p: float = 0.1
    epochs: int = 10
    finetune_lr: float = 1e-3
    mc_samples: int = 1
    # inference
    G: int = 5
    beam_size: int = 4

    def __post_init__(self):
        try:
            self.model_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        selection_spec(self.selection)
        if self.G < 1 or self.beam_size < 1:
            raise ConfigError("G and beam_size must be >= 1")
        if self.l2 <= 0:
            raise ConfigError("l2 must be > 0")

    # derived configs ------------------------------------------------------
    def model_config(self, vocab_size: int | None = None) -> TransformerConfig:
        return TransformerConfig(
            vocab_size=vocab_size or self.vocab_size, num_layers=self.num_layers,
            d_model=self.d_model, num_heads=self.num_heads, d_ff=self.d_ff,
            max_len=self.model_max_len, label_smoothing=self.label_smoothing,
            dropout=self.dropout, shared_embeddings=self.shared_embeddings)

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(steps=self.steps, warmup=self.warmup, lr=self.lr,
                              max_tokens=self.max_tokens, seed=self.seed)

    def variational_config(self) -> VariationalConfig:
        return VariationalConfig(l2=self.l2, selection=selection_spec(self.selection)[0],
                                 temperature=self.temperature, epochs=self.epochs,
                                 lr=self.finetune_lr, mc_samples=self.mc_samples,
                                 max_tokens=self.max_tokens, seed=self.seed)

    def path(self, suffix: str) -> Path:
        return Path(self.out) / f"{self.name}{suffix}"

    def echo(self) -> str:
        return " ".join(f"{f.name}={getattr(self, f.name)}" for f in fields(self))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def selection_spec(name: str):
    """Preset name or comma list of gate kinds -> (kinds, layers or None)."""
    if name in PRESETS:
        return PRESETS[name]
    kinds = tuple(k.strip() for k in name.split(",") if k.strip())
    bad = [k for k in kinds if k not in KINDS]
    if not kinds or bad:
        raise ConfigError(f"selection: unknown preset or kinds {name!r}")
    return kinds, None


def _coerce(f, raw: str):
    typ = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if typ == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{f.name}: cannot parse {raw!r} as {typ}") from exc


def parse_config(text: str, overrides: dict | None = None, name: str | None = None) -> ExperimentConfig:
    """UTF-8 ``key=value`` lines, ``#`` starts a comment. Unknown keys are rejected."""
    known = {f.name: f for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        values[key] = _coerce(known[key], raw)
    if name is not None and "name" not in values:
        values["name"] = name
    for key, val in (overrides or {}).items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(known[key], str(val)) if isinstance(val, str) else val
    return ExperimentConfig(**values)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"), overrides, name=p.stem)


# data -------------------------------------------------------------------------
def load_corpora(cfg: ExperimentConfig) -> tuple[ParallelCorpus, ParallelCorpus]:
    if cfg.train_src:
        train = read_corpus(cfg.train_src, cfg.train_tgt, cfg.sentence_max_len)
        test = read_corpus(cfg.test_src, cfg.test_tgt, cfg.sentence_max_len)
        return train, test
    kw = dict(num_symbols=cfg.num_symbols, min_len=cfg.gen_min_len, max_len=cfg.gen_max_len,
              k=cfg.synonyms_k, ambiguous_fraction=cfg.ambiguous_fraction)
    train = synth_task_generate(cfg.task, cfg.train_size, cfg.data_seed, **kw)
    # held-out set from a disjoint seed stream
    test = synth_task_generate(cfg.task, cfg.test_size, cfg.data_seed + 7919, **kw)
    return filter_length(train, cfg.sentence_max_len), filter_length(test, cfg.sentence_max_len)


# checkpoints ------------------------------------------------------------------
def save_model(path, model: Transformer, vocab: Vocab, cfg: ExperimentConfig, gates=(),
               extra: dict | None = None) -> None:
    arrays = model.weight_arrays()
    arrays.update(gate_arrays(gates))
    meta = {"config": cfg.to_dict(), "model": model.cfg.to_dict(), "vocab": vocab.itos}
    meta.update(extra or {})
    checkpoint.save(path, arrays, meta)


def load_model(path, temperature: float = 0.1):
    """-> (model, vocab, gates, meta)"""
    arrays, meta = checkpoint.load(path)
    model = Transformer(TransformerConfig(**meta["model"]))
    model.load_weight_arrays(arrays)
    model.eval()
    vocab = Vocab(meta["vocab"])
    return model, vocab, load_gates(model, arrays, temperature), meta


def _csv(cfg: ExperimentConfig, body: str) -> str:
    return f"# config: {cfg.echo()}\n" + body


def _ids(vocab, corpus):
    return [vocab.encode(s) for s in corpus.sources]


def decode_bleu(model, vocab, test: ParallelCorpus, masks=None, beam_size=1) -> float:
    outs = decode_corpus(model, _ids(vocab, test), masks, beam_size)
    return corpus_bleu([vocab.decode(o) for o in outs], test.targets).bleu


# commands -----------------------------------------------------------------------
def cmd_pretrain(cfg: ExperimentConfig) -> dict:
    log.info("config: %s", cfg.echo())
    train, test = load_corpora(cfg)
    vocab = build_vocab(train.sources + train.targets, cfg.vocab_size)
    model, history = pretrain(train, vocab, cfg.model_config(len(vocab)), cfg.pretrain_config())
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    save_model(cfg.path(".dmt1"), model, vocab, cfg, extra={"stage": "pretrained"})
    vocab.save(cfg.path(".vocab"))
    cfg.path(".train.csv").write_text(
        _csv(cfg, "step,loss\n" + "".join(f"{s},{l:.6f}\n" for s, l in history)), encoding="utf-8")
    # evaluate what was written, not the float64 in-memory weights
    model, vocab, _, _ = load_model(cfg.path(".dmt1"))
    bleu = decode_bleu(model, vocab, test, beam_size=cfg.beam_size)
    log.info("held-out BLEU %.2f", bleu)
    return {"checkpoint": str(cfg.path(".dmt1")), "held_out_bleu": bleu}


def _pretrained(cfg: ExperimentConfig):
    path = cfg.path(".dmt1")
    if not path.exists():
        raise FileNotFoundError(f"pretrained checkpoint not found: {path} (run pretrain first)")
    return load_model(path, cfg.temperature)


def finetune_gates(model, vocab, train, cfg: ExperimentConfig):
    """Place gates for cfg.selection on ``model`` and train their logits."""
    kinds, layers = selection_spec(cfg.selection)
    gates = gate_placement(model, kinds, cfg.temperature, layers=layers, init_p=cfg.init_p)
    vcfg = cfg.variational_config()
    n_tokens = train.target_token_count()
    history = finetune_dropout(model, gates, lambda e: make_batches(train, vocab, cfg.max_tokens,
                                                                    cfg.seed + 1000 + e),
                               vcfg, n_tokens)
    return gates, history


def cmd_finetune(cfg: ExperimentConfig) -> dict:
    log.info("config: %s", cfg.echo())
    model, vocab, _, _ = _pretrained(cfg)
    train, _ = load_corpora(cfg)
    gates, history = finetune_gates(model, vocab, train, cfg)
    save_model(cfg.path(".ft.dmt1"), model, vocab, cfg, gates, extra={"stage": "finetuned"})
    kinds = sorted({g.kind for g in gates}, key=KINDS.index)
    cfg.path(".ft.csv").write_text(_csv(cfg, history.to_csv(kinds)), encoding="utf-8")
    return {"checkpoint": str(cfg.path(".ft.dmt1")),
            "mean_p": history.rows[-1][3] if history.rows else {}}


def _finetuned(cfg: ExperimentConfig):
    path = cfg.path(".ft.dmt1")
    if not path.exists():
        raise FileNotFoundError(f"fine-tuned checkpoint not found: {path} (run finetune first)")
    return load_model(path, cfg.temperature)


def cmd_generate(cfg: ExperimentConfig) -> dict:
    log.info("config: %s", cfg.echo())
    model, vocab, gates, _ = _finetuned(cfg)
    _, test = load_corpora(cfg)
    groups = generate_diverse(model, gates, _ids(vocab, test), cfg.G, cfg.seed, cfg.beam_size)
    manifest = [json.dumps({"config": cfg.to_dict()}, sort_keys=True)]
    for grp in groups:
        path = cfg.path(f".group{grp.index}.txt")
        path.write_text("".join(detokenize(vocab.decode(o)) + "\n" for o in grp.outputs),
                        encoding="utf-8")
        manifest.append(json.dumps({"g": grp.index, "seed": grp.seed, "beam_size": cfg.beam_size,
                                    "file": path.name}, sort_keys=True))
    cfg.path(".groups.jsonl").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    return {"groups": [str(cfg.path(f".group{g.index}.txt")) for g in groups]}


def evaluate_groups(group_outputs, references, baseline_bleu=None) -> dict:
    reports = [corpus_bleu(outs, references) for outs in group_outputs]
    out = {
        "bleu": sum(r.bleu for r in reports) / len(reports),
        "group_bleu": [r.bleu for r in reports],
        "pairwise_bleu": pairwise_bleu(group_outputs) if len(group_outputs) > 1 else None,
        "precisions": [sum(r.precisions[n] for r in reports) / len(reports) for n in range(4)],
        "bp": sum(r.bp for r in reports) / len(reports),
    }
    if baseline_bleu is not None:
        out["baseline_bleu"] = baseline_bleu
    return out


def run_point(model, vocab, train, test, cfg: ExperimentConfig, baseline_bleu=None) -> dict:
    """Fine-tune gates on a fresh copy of the logits, generate G groups, score them."""
    gates, history = finetune_gates(model, vocab, train, cfg)
    groups = generate_diverse(model, gates, _ids(vocab, test), cfg.G, cfg.seed, cfg.beam_size)
    outs = [[vocab.decode(o) for o in g.outputs] for g in groups]
    res = evaluate_groups(outs, test.targets, baseline_bleu)
    res["mean_p"] = history.rows[-1][3] if history.rows else {g.kind: float(g.probs().mean()) for g in gates}
    return res


def cmd_finetune_generate_eval(cfg: ExperimentConfig) -> dict:
    """finetune -> generate -> metrics JSON."""
    cmd_finetune(cfg)
    cmd_generate(cfg)
    model, vocab, _, _ = _finetuned(cfg)
    _, test = load_corpora(cfg)
    groups = [[l.split() for l in cfg.path(f".group{g}.txt").read_text(encoding="utf-8").splitlines()]
              for g in range(1, cfg.G + 1)]
    res = evaluate_groups(groups, test.targets, decode_bleu(model, vocab, test, None, cfg.beam_size))
    res["config"] = cfg.to_dict()
    cfg.path(".metrics.json").write_text(json.dumps(res, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    return res


def cmd_sweep(cfg: ExperimentConfig, l2_values, selections) -> list[dict]:
    """One independent fine-tune/generate/evaluate per (selection, l2), all from the same checkpoint."""
    if len(l2_values) * len(selections) < 2:
        raise ConfigError("sweep needs at least 2 points")
    log.info("config: %s", cfg.echo())
    model, vocab, _, _ = _pretrained(cfg)
    train, test = load_corpora(cfg)
    baseline = decode_bleu(model, vocab, test, None, cfg.beam_size)
    rows = []
    lines = ["selection,l2,bleu,pairwise_bleu"]
    for sel in selections:
        for l2 in l2_values:
            try:
                point = dataclasses.replace(cfg, selection=sel, l2=float(l2))
                res = run_point(model, vocab, train, test, point, baseline)
                rows.append({"selection": sel, "l2": float(l2), **res})
                lines.append(f"{sel},{float(l2):g},{res['bleu']:.4f},{res['pairwise_bleu']:.4f}")
            except Exception as exc:  # a failed point must not end the sweep
                log.error("sweep point %s l2=%s failed: %s", sel, l2, exc)
                rows.append({"selection": sel, "l2": float(l2), "error": str(exc)})
                lines.append(f"{sel},{float(l2):g},ERROR,ERROR")
    body = f"# baseline_bleu={baseline:.4f}\n" + "\n".join(lines) + "\n"
    cfg.path(".sweep.csv").write_text(_csv(cfg, body), encoding="utf-8")
    return rows


def cmd_analyze(cfg: ExperimentConfig):
    log.info("config: %s", cfg.echo())
    model, vocab, gates, _ = _finetuned(cfg)
    _, test = load_corpora(cfg)
    report = analyze(model, gates, _ids(vocab, test), test.targets, vocab.decode, cfg.beam_size)
    for w in report.warnings:
        log.warning(w)
    cfg.path(".analysis.txt").write_text(f"# config: {cfg.echo()}\n" + report.to_table(),
                                         encoding="utf-8")
    cfg.path(".analysis.csv").write_text(_csv(cfg, report.to_csv()), encoding="utf-8")
    return report


def set_deterministic() -> None:
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
