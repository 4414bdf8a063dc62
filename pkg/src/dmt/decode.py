"""Greedy and beam decoding, model sampling from trained gates, and diverse
group generation."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .data import BOS, EOS, PAD
from .gates import DropoutGate, MaskSample, as_masks, hard_mask
from .model import Transformer

_BANNED = (PAD, BOS)


def length_cap(src_len: int) -> int:
    return 2 * src_len + 8


@dataclass
class Hypothesis:
    tokens: list[int]       # generated ids, EOS excluded
    logprob: float
    score: float
    finished: bool


@dataclass
class SampledModel:
    seed: int
    masks: list[MaskSample]

    def mask_dict(self) -> dict:
        return as_masks(self.masks)


@dataclass
class TranslationGroup:
    index: int
    seed: int
    outputs: list[list[int]] = field(default_factory=list)


def sample_model(gates: list[DropoutGate], seed: int) -> SampledModel:
    """One hard mask per gate, reused for every sentence this model decodes."""
    return SampledModel(seed, [hard_mask(g, seed) for g in gates])


def _step_logprobs(model, prefixes, memory, src_pad, masks):
    tgt = torch.tensor([[BOS] + p for p in prefixes], dtype=torch.long)
    n = len(prefixes)
    lp = model.decode(tgt, memory.expand(n, -1, -1), src_pad.expand(n, -1), masks)[:, -1, :]
    lp = lp.clone()
    lp[:, list(_BANNED)] = float("-inf")
    return lp


@torch.no_grad()
def beam_search(model: Transformer, src_tokens, beam_size: int = 4, cap: int | None = None,
                masks: dict | None = None, alpha: float = 1.0) -> list[Hypothesis]:
    """Beam search scored by sum(log p) / len**alpha, len counting the EOS.

    Finished hypotheses are collected from EOS candidates ranked inside the
    top ``beam_size``; search stops once ``beam_size`` have finished or the
    cap is hit, in which case live beams are returned flagged unfinished.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    model.eval()
    src = torch.tensor([list(src_tokens)], dtype=torch.long)
    cap = length_cap(src.shape[1]) if cap is None else cap
    memory = model.encode(src, masks)
    src_pad = src.eq(PAD)

    def norm(logp, length):
        return logp / (length ** alpha) if alpha else logp

    beams: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[Hypothesis] = []
    for _ in range(cap):
        lp = _step_logprobs(model, [b[0] for b in beams], memory, src_pad, masks)
        k = min(2 * beam_size, lp.shape[1])
        top_lp, top_ix = lp.topk(k, dim=1)
        cands = []
        for b, (toks, base) in enumerate(beams):
            for v, i in zip(top_lp[b].tolist(), top_ix[b].tolist()):
                if v != float("-inf"):
                    cands.append((base + v, toks + [i]))
        cands.sort(key=lambda c: (-c[0], c[1]))
        nxt = []
        for rank, (logp, toks) in enumerate(cands):
            if toks[-1] == EOS:
                if rank < beam_size:
                    finished.append(Hypothesis(toks[:-1], logp, norm(logp, len(toks)), True))
            elif len(nxt) < beam_size:
                nxt.append((toks, logp))
            if len(nxt) == beam_size and rank >= beam_size:
                break
        if len(finished) >= beam_size or not nxt:
            break
        beams = nxt
    else:
        for toks, logp in beams:
            if len(finished) >= beam_size:
                break
            finished.append(Hypothesis(toks, logp, norm(logp, len(toks)), False))
    # earlier-finishing then lexicographic token order on score ties
    finished.sort(key=lambda h: (-h.score, len(h.tokens), h.tokens))
    return finished[:beam_size]


@torch.no_grad()
def greedy_decode(model: Transformer, sources: list[list[int]], masks: dict | None = None,
                  cap: int | None = None) -> list[list[int]]:
    """Batched argmax decoding; each sentence is capped at 2 * src_len + 8 tokens."""
    model.eval()
    if not sources:
        return []
    B = len(sources)
    S = max(len(s) for s in sources)
    src = torch.full((B, S), PAD, dtype=torch.long)
    for i, s in enumerate(sources):
        src[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    caps = [length_cap(len(s)) if cap is None else cap for s in sources]
    memory = model.encode(src, masks)
    src_pad = src.eq(PAD)
    out = [[] for _ in range(B)]
    done = [False] * B
    tgt = torch.full((B, 1), BOS, dtype=torch.long)
    for step in range(max(caps)):
        lp = model.decode(tgt, memory, src_pad, masks)[:, -1, :].clone()
        lp[:, list(_BANNED)] = float("-inf")
        nxt = lp.argmax(-1)
        for i in range(B):
            if done[i]:
                continue
            tok = int(nxt[i])
            if tok == EOS:
                done[i] = True
            else:
                out[i].append(tok)
                if len(out[i]) >= caps[i]:
                    done[i] = True
        if all(done):
            break
        tgt = torch.cat([tgt, nxt[:, None]], dim=1)
    return out


def decode_corpus(model: Transformer, sources: list[list[int]], masks: dict | None = None,
                  beam_size: int = 1) -> list[list[int]]:
    """Top-1 output per sentence; beam_size 1 takes the batched greedy path."""
    if beam_size == 1:
        return greedy_decode(model, sources, masks)
    outs = []
    for i, s in enumerate(sources):
        try:
            outs.append(beam_search(model, s, beam_size, masks=masks)[0].tokens)
        except Exception as exc:
            raise RuntimeError(f"decoding failed for sentence {i}: {exc}") from exc
    return outs


def generate_diverse(model: Transformer, gates: list[DropoutGate], sources: list[list[int]],
                     G: int = 5, base_seed: int = 0, beam_size: int = 1) -> list[TranslationGroup]:
    """Group g (1..G) is the top-1 output of the model sampled with seed base_seed + g."""
    if G < 1:
        raise ValueError("G must be >= 1")
    groups = []
    for g in range(1, G + 1):
        sampled = sample_model(gates, base_seed + g)
        outs = decode_corpus(model, sources, sampled.mask_dict(), beam_size)
        groups.append(TranslationGroup(g, sampled.seed, outs))
    return groups
