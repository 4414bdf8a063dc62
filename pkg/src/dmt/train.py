"""Pre-training with label-smoothed NLL and the warmup Adam schedule."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import torch

from .autodiff import make_optimizer
from .data import ParallelCorpus, Vocab, make_batches
from .model import Transformer, TransformerConfig, nll_loss_label_smoothed
from .variational import DivergenceError

log = logging.getLogger(__name__)


@dataclass
class PretrainConfig:
    steps: int = 3000
    warmup: int = 400
    lr: float = 1.0
    max_tokens: int = 512
    seed: int = 1
    log_every: int = 50


def init_model(cfg: TransformerConfig, seed: int) -> Transformer:
    torch.manual_seed(seed)
    return Transformer(cfg)


def pretrain(corpus: ParallelCorpus, vocab: Vocab, model_cfg: TransformerConfig,
             cfg: PretrainConfig, model: Transformer | None = None):
    """Returns (model, [(step, loss per token), ...])."""
    model = init_model(model_cfg, cfg.seed) if model is None else model
    torch.manual_seed(cfg.seed + 1)
    opt, sched = make_optimizer(model.parameters(), lr=cfg.lr, d_model=model_cfg.d_model,
                                warmup=cfg.warmup)
    history = []
    step, epoch = 0, 0
    while step < cfg.steps:
        epoch += 1
        model.train()
        for batch in make_batches(corpus, vocab, cfg.max_tokens, cfg.seed + epoch):
            if step >= cfg.steps:
                break
            step += 1
            opt.zero_grad()
            logprobs = model(batch.src, batch.tgt_in)
            loss = nll_loss_label_smoothed(logprobs, batch.tgt_out, model_cfg.label_smoothing)
            loss = loss / batch.num_tokens
            if not math.isfinite(loss.item()):
                raise DivergenceError(f"loss became {loss.item()} at step {step}")
            loss.backward()
            opt.step()
            sched.step()
            if step % cfg.log_every == 0 or step == cfg.steps:
                history.append((step, loss.item()))
                log.debug("step %d loss %.4f", step, loss.item())
    model.eval()
    return model, history
