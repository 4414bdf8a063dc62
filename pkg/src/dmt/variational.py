"""KL terms for Bernoulli column dropout under a Gaussian prior, the ELBO
batch loss, and the fine-tuning loop that trains only gate logits."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import torch

from .autodiff import DTYPE, make_optimizer
from .data import Batch
from .gates import DropoutGate, as_masks, relaxed_mask
from .model import Transformer, nll_loss_label_smoothed

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    pass


@dataclass
class VariationalConfig:
    l2: float = 1000.0
    selection: tuple = ("dec-embed", "dec-self-attn", "enc-dec-attn", "dec-ffn")
    corpus_tokens: int = 0          # N; 0 means "count it from the corpus"
    temperature: float = 0.1
    epochs: int = 10
    lr: float = 1e-3
    mc_samples: int = 1
    max_tokens: int = 512
    seed: int = 1

    def __post_init__(self):
        if self.l2 <= 0:
            raise ValueError("l2 must be > 0")
        if not self.selection:
            raise ValueError("selection must be non-empty")
        if self.corpus_tokens < 0:
            raise ValueError("corpus_tokens must be >= 0")


def column_regularizer(p, w_col, l2):
    """(1 - p) * l^2 / 2 * sum_i W_ij^2; ``w_col`` may be a sequence or an (m, n) tensor."""
    if torch.is_tensor(w_col):
        return (1 - p) * l2 / 2 * (w_col ** 2).sum(0)
    return (1 - p) * l2 / 2 * sum(w * w for w in w_col)


def bernoulli_entropy(p):
    if torch.is_tensor(p):
        return -(p * torch.log(p) + (1 - p) * torch.log1p(-p))
    return -(p * math.log(p) + (1 - p) * math.log1p(-p))


def gate_kl(gate: DropoutGate, l2: float) -> torch.Tensor:
    p = gate.probs()
    return ((1 - p) * l2 / 2 * gate.col_sq_norms() - bernoulli_entropy(p)).sum()


def total_kl(gates, l2: float) -> torch.Tensor:
    """Sum over trainable gates and their columns of R(p_j, W_.j, l) - H(p_j)."""
    kl = torch.zeros((), dtype=DTYPE)
    for g in gates:
        if g.trainable:
            kl = kl + gate_kl(g, l2)
    return kl


def kl_parts(gates, l2: float) -> tuple[torch.Tensor, torch.Tensor]:
    """(sum R, sum H) over trainable gates."""
    r = torch.zeros((), dtype=DTYPE)
    h = torch.zeros((), dtype=DTYPE)
    for g in gates:
        if g.trainable:
            p = g.probs()
            r = r + ((1 - p) * l2 / 2 * g.col_sq_norms()).sum()
            h = h + bernoulli_entropy(p).sum()
    return r, h


def draw_uniforms(gates, generator: torch.Generator) -> dict:
    return {g.gate_id: torch.rand(g.n, dtype=DTYPE, generator=generator) for g in gates}


def elbo_batch_loss(batch: Batch, model: Transformer, gates, l2: float, corpus_tokens: int,
                    uniforms: dict) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """NLL(batch | relaxed-masked model) + (M_j / N) * KL.

    ``uniforms`` holds one u-vector per gate, i.e. one sampled model for the
    whole batch. Returns (loss, nll, kl); loss is un-averaged.
    """
    masks = as_masks(relaxed_mask(g, uniforms[g.gate_id]) for g in gates)
    logprobs = model(batch.src, batch.tgt_in, masks)
    nll = nll_loss_label_smoothed(logprobs, batch.tgt_out, 0.0)
    kl = total_kl(gates, l2)
    loss = nll + batch.num_tokens / corpus_tokens * kl
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite ELBO loss (nll={nll.item()}, kl={kl.item()})")
    return loss, nll, kl


@dataclass
class FinetuneLog:
    rows: list = field(default_factory=list)   # (epoch, nll, kl, {gate kind: mean p})

    def to_csv(self, kinds) -> str:
        lines = ["epoch,nll,kl," + ",".join(f"mean_p_{k}" for k in kinds)]
        for epoch, nll, kl, means in self.rows:
            lines.append(f"{epoch},{nll:.6f},{kl:.6f}," + ",".join(f"{means[k]:.6f}" for k in kinds))
        return "\n".join(lines) + "\n"


def mean_p_by_kind(gates) -> dict:
    out = {}
    for g in gates:
        out.setdefault(g.kind, []).append(g.probs().detach())
    return {k: float(torch.cat(v).mean()) for k, v in out.items()}


def finetune_dropout(model: Transformer, gates, batches_for_epoch, cfg: VariationalConfig,
                     corpus_tokens: int) -> FinetuneLog:
    """Train gate logits on the ELBO with the model weights frozen.

    ``batches_for_epoch(e)`` returns the batch list for epoch ``e``. Logits
    are updated in place; model weights are never touched.
    """
    model.eval()
    model.requires_grad_(False)
    trainable = [g.logits for g in gates if g.trainable]
    opt, _ = make_optimizer(trainable, lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    history = FinetuneLog()
    for epoch in range(1, cfg.epochs + 1):
        tot_nll, tot_tokens, kl_val = 0.0, 0, 0.0
        for batch in batches_for_epoch(epoch):
            opt.zero_grad()
            loss = torch.zeros((), dtype=DTYPE)
            for _ in range(cfg.mc_samples):
                l, nll, kl = elbo_batch_loss(batch, model, gates, cfg.l2, corpus_tokens,
                                             draw_uniforms(gates, gen))
                loss = loss + l / cfg.mc_samples
                tot_nll += nll.item() / cfg.mc_samples
            (loss / batch.num_tokens).backward()
            opt.step()
            tot_tokens += batch.num_tokens
            kl_val = kl.item()
        means = mean_p_by_kind(gates)
        history.rows.append((epoch, tot_nll / max(tot_tokens, 1), kl_val, means))
        log.info("finetune epoch %d nll/tok %.4f kl %.2f mean p %s", epoch,
                 tot_nll / max(tot_tokens, 1), kl_val, {k: round(v, 4) for k, v in means.items()})
    return history
