"""Module importance: trained drop probability vs BLEU with the module pruned."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from .decode import decode_corpus
from .gates import DropoutGate
from .metrics import MetricError, corpus_bleu, pearson_corr


@dataclass
class ImportanceRow:
    kind: str
    layer: int
    mean_p: float
    pruned_bleu: float


@dataclass
class ModuleImportanceReport:
    baseline_bleu: float
    rows: list[ImportanceRow] = field(default_factory=list)
    rho: dict = field(default_factory=dict)       # kind -> Pearson rho
    warnings: list[str] = field(default_factory=list)

    def kinds(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.kind not in seen:
                seen.append(r.kind)
        return seen

    def to_csv(self) -> str:
        lines = ["kind,layer,mean_p,pruned_bleu", f"none,0,,{self.baseline_bleu:.6f}"]
        lines += [f"{r.kind},{r.layer},{r.mean_p:.6f},{r.pruned_bleu:.6f}" for r in self.rows]
        lines += [f"rho:{k},,,{v:.6f}" for k, v in self.rho.items()]
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        out = [f"{'module':<16}{'layer':>6}{'mean_p':>10}{'BLEU':>9}",
               f"{'(unpruned)':<16}{'':>6}{'':>10}{self.baseline_bleu:>9.2f}"]
        for kind in self.kinds():
            for r in (r for r in self.rows if r.kind == kind):
                out.append(f"{r.kind:<16}{r.layer:>6}{r.mean_p:>10.4f}{r.pruned_bleu:>9.2f}")
            if kind in self.rho:
                out.append(f"{'rho ' + kind:<32}{self.rho[kind]:>9.3f}")
        out += [f"warning: {w}" for w in self.warnings]
        return "\n".join(out) + "\n"


def average_dropout_probability(gate: DropoutGate) -> float:
    return float(gate.probs().detach().mean())


def prune_module_bleu(model, gates, module_id, sources, references, decode_tokens,
                      beam_size: int = 1) -> float:
    """Corpus BLEU with the named gate's module output forced to zero.

    ``module_id`` None prunes nothing. ``decode_tokens`` maps output ids to tokens.
    """
    masks = None
    if module_id is not None:
        by_id = {g.gate_id: g for g in gates}
        if module_id not in by_id:
            raise KeyError(f"unknown module {module_id!r}; gated modules: {sorted(by_id)}")
        masks = {module_id: torch.zeros(by_id[module_id].n, dtype=by_id[module_id].logits.dtype)}
    outs = decode_corpus(model, sources, masks, beam_size)
    return corpus_bleu([decode_tokens(o) for o in outs], references).bleu


def importance_correlation(rows: list[ImportanceRow]) -> float:
    if len(rows) < 2:
        raise MetricError("need at least 2 layers to correlate")
    try:
        return pearson_corr([r.mean_p for r in rows], [r.pruned_bleu for r in rows])
    except MetricError as exc:
        raise MetricError(f"{rows[0].kind}: {exc}") from exc


def analyze(model, gates, sources, references, decode_tokens, beam_size: int = 1,
            expected_kinds=("enc-self-attn", "dec-self-attn", "enc-dec-attn")) -> ModuleImportanceReport:
    report = ModuleImportanceReport(
        prune_module_bleu(model, gates, None, sources, references, decode_tokens, beam_size))
    for g in gates:
        report.rows.append(ImportanceRow(
            g.kind, g.layer, average_dropout_probability(g),
            prune_module_bleu(model, gates, g.gate_id, sources, references, decode_tokens, beam_size)))
    present = report.kinds()
    for kind in expected_kinds:
        if kind not in present:
            report.warnings.append(f"selection has no {kind} gates; omitted")
    for kind in present:
        rows = [r for r in report.rows if r.kind == kind]
        if len(rows) < 2:
            continue
        try:
            rho = importance_correlation(rows)
        except MetricError as exc:
            report.warnings.append(str(exc))
            rho = math.nan
        report.rho[kind] = rho
    return report
