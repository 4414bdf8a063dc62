"""Per-column dropout gates over Transformer weight matrices.

A gate owns one logit per output column of its effective matrix:

* embeddings: the embedding table (vocab x d_model), columns = embedding dims
* attention: the output projection W_O
* feed-forward: W_2 with b_2 appended as an extra row, so dropping column j
  removes both W_2[:, j] and b_2[j]

Masks scale module outputs and are never rescaled by 1/(1-p).
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np
import torch

from .autodiff import DTYPE
from .model import Transformer

P_CLAMP = 1e-6
U_CLAMP = 1e-7
DEFAULT_TEMPERATURE = 0.1
INIT_P = 0.1

ENC_KINDS = ("enc-embed", "enc-self-attn", "enc-ffn")
DEC_KINDS = ("dec-embed", "dec-self-attn", "enc-dec-attn", "dec-ffn")
KINDS = ENC_KINDS + DEC_KINDS + ("embed",)
ATTENTION_KINDS = ("enc-self-attn", "dec-self-attn", "enc-dec-attn")


class GateConfigError(ValueError):
    pass


def logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)


_LOGIT_MAX = logit(1 - P_CLAMP)


@dataclass
class DropoutGate:
    kind: str
    layer: int
    effective: torch.Tensor        # frozen (m, n) matrix; column j <-> output feature j
    logits: torch.Tensor           # (n,) drop-probability logits
    temperature: float = DEFAULT_TEMPERATURE
    trainable: bool = True

    @property
    def gate_id(self) -> str:
        return f"{self.kind}/{self.layer}"

    @property
    def n(self) -> int:
        return self.logits.shape[0]

    def log_odds(self) -> torch.Tensor:
        """log p - log(1-p) with p clamped to (1e-6, 1-1e-6)."""
        return self.logits.clamp(-_LOGIT_MAX, _LOGIT_MAX)

    def probs(self) -> torch.Tensor:
        return torch.sigmoid(self.log_odds())

    def col_sq_norms(self) -> torch.Tensor:
        return (self.effective.detach() ** 2).sum(0)


@dataclass
class MaskSample:
    gate_id: str
    mode: str          # "hard" | "relaxed"
    keep: torch.Tensor
    seed: int | None = None


def _effective_matrix(model: Transformer, kind: str, layer: int) -> torch.Tensor:
    if kind in ("enc-embed", "embed"):
        return model.src_embed.detach()
    if kind == "dec-embed":
        return model.tgt_embed.detach()
    if kind == "enc-self-attn":
        return model.enc_layers[layer - 1].self_attn.wo.detach()
    if kind == "dec-self-attn":
        return model.dec_layers[layer - 1].self_attn.wo.detach()
    if kind == "enc-dec-attn":
        return model.dec_layers[layer - 1].cross_attn.wo.detach()
    ffn = (model.enc_layers if kind == "enc-ffn" else model.dec_layers)[layer - 1].ffn
    return torch.cat([ffn.w2.detach(), ffn.b2.detach()[None, :]], dim=0)


def gate_placement(model: Transformer, selection, temperature: float = DEFAULT_TEMPERATURE,
                   layers=None, init_p: float = INIT_P) -> list[DropoutGate]:
    """One gate per (selected kind, layer); logits start at logit(init_p).

    ``layers`` optionally restricts layered kinds to those (1-based) layers.
    With shared embeddings the single ``embed`` gate replaces the per-side
    ones and is placed only when both sides' embedding kinds are selected
    (or ``embed`` is named directly).
    """
    selection = set(selection)
    if not selection:
        raise GateConfigError("gate selection is empty")
    unknown = selection - set(KINDS)
    if unknown:
        raise GateConfigError(f"unknown gate kinds: {sorted(unknown)}")
    shared = model.cfg.shared_embeddings
    specs = []
    if shared:
        if "embed" in selection or {"enc-embed", "dec-embed"} <= selection:
            specs.append(("embed", 0))
    else:
        for kind in ("enc-embed", "dec-embed"):
            if kind in selection or "embed" in selection:
                specs.append((kind, 0))
    for kind in ("enc-self-attn", "enc-ffn", "dec-self-attn", "enc-dec-attn", "dec-ffn"):
        if kind in selection:
            for i in range(1, model.cfg.num_layers + 1):
                if layers is None or i in layers:
                    specs.append((kind, i))
    gates = []
    for kind, layer in specs:
        eff = _effective_matrix(model, kind, layer)
        logits = torch.full((eff.shape[1],), logit(init_p), dtype=DTYPE, requires_grad=True)
        gates.append(DropoutGate(kind, layer, eff, logits, temperature))
    return gates


def relaxed_keep(log_odds: torch.Tensor, u: torch.Tensor, temperature: float) -> torch.Tensor:
    """1 - sigmoid((log_odds + log u - log(1-u)) / t); u is clamped into (1e-7, 1-1e-7)."""
    u = u.clamp(U_CLAMP, 1 - U_CLAMP)
    z = torch.sigmoid((log_odds + torch.log(u) - torch.log1p(-u)) / temperature)
    return 1 - z


def relaxed_mask(gate: DropoutGate, u: torch.Tensor) -> MaskSample:
    """Concrete relaxation; ``z`` is read as the drop indicator, so keep = 1 - z."""
    return MaskSample(gate.gate_id, "relaxed", relaxed_keep(gate.log_odds(), u, gate.temperature))


def _stream(seed: int, gate_id: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([seed & 0xFFFFFFFF, zlib.crc32(gate_id.encode())])))


def hard_mask(gate: DropoutGate, seed: int, probs=None) -> MaskSample:
    """keep_j = 0 with probability p_j; draw j is entry j of a stream keyed by (seed, gate id).

    ``probs`` overrides the gate's own (clamped) probabilities, e.g. for exact 0/1 checks.
    """
    p = gate.probs().detach().numpy() if probs is None else np.asarray(probs, dtype=np.float64)
    u = _stream(seed, gate.gate_id).random(gate.n)
    keep = (u >= p).astype(np.float64)
    return MaskSample(gate.gate_id, "hard", torch.from_numpy(keep), seed)


def apply_mask(mask: MaskSample, module_output: torch.Tensor) -> torch.Tensor:
    if module_output.shape[-1] != mask.keep.shape[0]:
        raise ValueError(f"mask length {mask.keep.shape[0]} != feature dim {module_output.shape[-1]}")
    return module_output * mask.keep


def as_masks(samples) -> dict:
    return {s.gate_id: s.keep for s in samples}


def all_drop_masks(gates) -> dict:
    return {g.gate_id: torch.zeros(g.n, dtype=DTYPE) for g in gates}


def gate_arrays(gates) -> dict[str, np.ndarray]:
    return {f"gate/{g.kind}/{g.layer}/logits": g.logits.detach().numpy() for g in gates}


def load_gates(model: Transformer, arrays: dict[str, np.ndarray],
               temperature: float = DEFAULT_TEMPERATURE) -> list[DropoutGate]:
    """Rebuild gates from ``gate/<kind>/<layer>/logits`` arrays in a checkpoint."""
    gates = []
    for name, arr in arrays.items():
        if not name.startswith("gate/"):
            continue
        _, kind, layer, _ = name.split("/")
        if kind not in KINDS:
            raise GateConfigError(f"checkpoint has unknown gate kind {kind!r}")
        eff = _effective_matrix(model, kind, int(layer))
        logits = torch.tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)
        gates.append(DropoutGate(kind, int(layer), eff, logits, temperature))
    return gates
