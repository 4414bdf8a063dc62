"""Gradient plumbing around torch autograd: a finite-difference oracle and the
Adam + warmup schedule shared by pre-training and dropout fine-tuning."""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
import torch

DTYPE = torch.float64

ADAM_BETAS = (0.9, 0.98)
ADAM_EPS = 1e-9


def backward(loss: torch.Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.dim() != 0:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    loss.backward()


def finite_diff_grad(f: Callable[[], float], params: Sequence[torch.Tensor],
                     step: float = 1e-4) -> list[np.ndarray]:
    """Central-difference gradient of ``f()`` with respect to each tensor in ``params``.

    ``f`` reads the tensors' current values; they are perturbed in place and
    restored. ``f`` must be deterministic (fix any random draws outside it).
    """
    grads = []
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            g = np.zeros(flat.numel())
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                fp = float(f())
                flat[i] = orig - step
                fm = float(f())
                flat[i] = orig
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    raise FloatingPointError(f"non-finite objective while perturbing entry {i}")
                g[i] = (fp - fm) / (2 * step)
            grads.append(g.reshape(tuple(p.shape)))
    return grads


def noam_rate(step: int, d_model: int, warmup: int) -> float:
    """d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)."""
    if step < 1:
        raise ValueError("schedule is defined for step >= 1")
    return d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


def make_optimizer(params, lr: float = 1.0, d_model: int | None = None,
                   warmup: int | None = None):
    """Adam(0.9, 0.98, 1e-9). With ``d_model`` and ``warmup`` the rate follows
    the warmup schedule scaled by ``lr``; otherwise it is the constant ``lr``."""
    opt = torch.optim.Adam(params, lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS)
    if d_model is None:
        sched = None
    else:
        # LambdaLR counts from 0, the schedule from 1
        sched = torch.optim.lr_scheduler.LambdaLR(
            opt, lambda s: noam_rate(s + 1, d_model, warmup))
    return opt, sched
