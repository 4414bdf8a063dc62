"""Encoder-decoder Transformer with optional per-module output gating.

Weights use the ``y = x @ W + b`` orientation, so column ``j`` of every
matrix produces output feature ``j``. That is the axis dropout gates act on.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .autodiff import DTYPE
from .data import PAD

Masks = dict  # gate id -> keep vector of length d_model


@dataclass
class TransformerConfig:
    vocab_size: int
    num_layers: int = 2
    d_model: int = 32
    num_heads: int = 2
    d_ff: int = 64
    max_len: int = 256
    label_smoothing: float = 0.1
    dropout: float = 0.1
    shared_embeddings: bool = False

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by num_heads={self.num_heads}")
        if not 0 <= self.label_smoothing < 1:
            raise ValueError("label_smoothing must be in [0, 1)")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.vocab_size < 5:
            raise ValueError("vocab_size must be >= 5")

    @property
    def d_k(self) -> int:
        return self.d_model // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)


def scaled_dot_attention(q, k, v, mask=None):
    """softmax(q k^T / sqrt(d_k)) v; ``mask`` is True where a key is disallowed."""
    d_k = q.shape[-1]
    scores = q @ k.transpose(-2, -1) / math.sqrt(d_k)
    if mask is not None:
        mask = mask.expand(scores.shape)
        if mask.all(dim=-1).any():
            raise ValueError("attention query has every key masked")
        scores = scores.masked_fill(mask, float("-inf"))
    return torch.softmax(scores, dim=-1) @ v


def multi_head_attention(x_q, x_kv, wq, wk, wv, wo, num_heads: int, mask=None):
    """Concat(head_1..head_h) @ wo, head i using column block i of wq/wk/wv.

    ``mask`` broadcasts against (B, h, Lq, Lk).
    """
    B, Lq, d = x_q.shape
    Lk = x_kv.shape[1]
    d_k = wq.shape[1] // num_heads

    def split(x, w, L):
        return (x @ w).view(B, L, num_heads, d_k).transpose(1, 2)

    heads = scaled_dot_attention(split(x_q, wq, Lq), split(x_kv, wk, Lk), split(x_kv, wv, Lk), mask)
    return heads.transpose(1, 2).reshape(B, Lq, num_heads * d_k) @ wo


def feed_forward(x, w1, b1, w2, b2):
    return torch.relu(x @ w1 + b1) @ w2 + b2


def sinusoid_table(max_len: int, d_model: int) -> torch.Tensor:
    pos = torch.arange(max_len, dtype=DTYPE).unsqueeze(1)
    div = torch.exp(torch.arange(0, d_model, 2, dtype=DTYPE) * (-math.log(10000.0) / d_model))
    table = torch.zeros(max_len, d_model, dtype=DTYPE)
    table[:, 0::2] = torch.sin(pos * div)
    table[:, 1::2] = torch.cos(pos * div)[:, : d_model // 2]
    return table


def _matrix(n_in, n_out):
    w = torch.empty(n_in, n_out, dtype=DTYPE)
    nn.init.xavier_uniform_(w)
    return nn.Parameter(w)


def _vector(n, value=0.0):
    return nn.Parameter(torch.full((n,), value, dtype=DTYPE))


class Attention(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        d = cfg.d_model
        self.num_heads = cfg.num_heads
        self.wq, self.wk, self.wv, self.wo = (_matrix(d, d) for _ in range(4))

    def forward(self, x_q, x_kv, mask=None):
        return multi_head_attention(x_q, x_kv, self.wq, self.wk, self.wv, self.wo, self.num_heads, mask)


class FeedForward(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.w1 = _matrix(cfg.d_model, cfg.d_ff)
        self.b1 = _vector(cfg.d_ff)
        self.w2 = _matrix(cfg.d_ff, cfg.d_model)
        self.b2 = _vector(cfg.d_model)

    def forward(self, x):
        return feed_forward(x, self.w1, self.b1, self.w2, self.b2)


class LayerNorm(nn.Module):
    def __init__(self, d):
        super().__init__()
        self.gain = _vector(d, 1.0)
        self.bias = _vector(d)

    def forward(self, x):
        return F.layer_norm(x, x.shape[-1:], self.gain, self.bias, eps=1e-5)


class EncoderLayer(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.self_attn = Attention(cfg)
        self.ffn = FeedForward(cfg)
        self.ln1, self.ln2 = LayerNorm(cfg.d_model), LayerNorm(cfg.d_model)


class DecoderLayer(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.self_attn = Attention(cfg)
        self.cross_attn = Attention(cfg)
        self.ffn = FeedForward(cfg)
        self.ln1, self.ln2, self.ln3 = (LayerNorm(cfg.d_model) for _ in range(3))


class Transformer(nn.Module):
    """Post-layer-norm encoder-decoder.

    Gate ids are ``"<kind>/<layer>"``: ``enc-embed/0``, ``dec-embed/0`` (or a
    single ``embed/0`` when embeddings are shared), ``enc-self-attn/i``,
    ``enc-ffn/i``, ``dec-self-attn/i``, ``enc-dec-attn/i``, ``dec-ffn/i`` with
    layers counted from 1. ``masks`` maps such ids to keep vectors that scale
    the named module's output.
    """

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.cfg = cfg
        d, K = cfg.d_model, cfg.vocab_size
        self.src_embed = nn.Parameter(torch.randn(K, d, dtype=DTYPE) * d ** -0.5)
        if cfg.shared_embeddings:
            self.tgt_embed = self.src_embed
        else:
            self.tgt_embed = nn.Parameter(torch.randn(K, d, dtype=DTYPE) * d ** -0.5)
        self.register_buffer("pos_table", sinusoid_table(cfg.max_len, d), persistent=False)
        self.enc_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.num_layers))
        self.dec_layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.num_layers))
        self.out_w = _matrix(d, K)
        self.out_b = _vector(K)

    # gating helpers -----------------------------------------------------
    def _out(self, x, gate_id, masks):
        if masks is not None and gate_id in masks:
            x = x * masks[gate_id]
        elif self.training and self.cfg.dropout > 0:
            x = F.dropout(x, self.cfg.dropout, training=True)
        return x

    def embed_gate_id(self, side: str) -> str:
        return "embed/0" if self.cfg.shared_embeddings else f"{side}-embed/0"

    def _embed(self, ids, table, side, masks):
        if int(ids.max()) >= self.cfg.vocab_size or int(ids.min()) < 0:
            raise IndexError(f"token id out of range [0, {self.cfg.vocab_size})")
        if ids.shape[1] > self.cfg.max_len:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds max_len {self.cfg.max_len}")
        x = table[ids] * math.sqrt(self.cfg.d_model)
        x = self._out(x, self.embed_gate_id(side), masks)
        return x + self.pos_table[: ids.shape[1]]

    # forward ------------------------------------------------------------
    def encode(self, src, masks: Masks | None = None):
        key_pad = src.eq(PAD)[:, None, None, :]
        x = self._embed(src, self.src_embed, "enc", masks)
        for i, layer in enumerate(self.enc_layers, start=1):
            x = layer.ln1(x + self._out(layer.self_attn(x, x, key_pad), f"enc-self-attn/{i}", masks))
            x = layer.ln2(x + self._out(layer.ffn(x), f"enc-ffn/{i}", masks))
        return x

    def decode(self, tgt_in, memory, src_pad, masks: Masks | None = None):
        """Log-probability rows (B, T, K) for each target prefix position."""
        T = tgt_in.shape[1]
        causal = torch.ones(T, T, dtype=torch.bool).triu(1)[None, None]
        mem_pad = src_pad[:, None, None, :]
        x = self._embed(tgt_in, self.tgt_embed, "dec", masks)
        for i, layer in enumerate(self.dec_layers, start=1):
            x = layer.ln1(x + self._out(layer.self_attn(x, x, causal), f"dec-self-attn/{i}", masks))
            x = layer.ln2(x + self._out(layer.cross_attn(x, memory, mem_pad), f"enc-dec-attn/{i}", masks))
            x = layer.ln3(x + self._out(layer.ffn(x), f"dec-ffn/{i}", masks))
        return torch.log_softmax(x @ self.out_w + self.out_b, dim=-1)

    def forward(self, src, tgt_in, masks: Masks | None = None):
        return self.decode(tgt_in, self.encode(src, masks), src.eq(PAD), masks)

    # (de)serialization ----------------------------------------------------
    def weight_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.detach().cpu().numpy() for name, p in self.named_parameters()}

    def load_weight_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name not in arrays:
                    raise KeyError(f"checkpoint lacks weight {name}")
                if tuple(arrays[name].shape) != tuple(p.shape):
                    raise ValueError(f"shape mismatch for {name}: {arrays[name].shape} vs {tuple(p.shape)}")
                p.copy_(torch.from_numpy(np.asarray(arrays[name], dtype=np.float64)))


def forward_logprobs(model: Transformer, src_tokens, tgt_prefix, masks: Masks | None = None):
    """Log P(y_t | y_<t, x) rows for one sentence or a batch of id lists/tensors."""
    src = torch.as_tensor(src_tokens, dtype=torch.long)
    tgt = torch.as_tensor(tgt_prefix, dtype=torch.long)
    squeeze = src.dim() == 1
    if squeeze:
        src, tgt = src[None], tgt[None]
    out = model(src, tgt, masks)
    return out[0] if squeeze else out


def nll_loss_label_smoothed(logprobs, targets, eps: float, pad: int = PAD):
    """Summed cross-entropy against targets with 1-eps on gold and eps/(K-1) elsewhere.

    Positions whose target is ``pad`` are excluded.
    """
    K = logprobs.shape[-1]
    keep = targets.ne(pad)
    gold = logprobs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    if eps == 0:
        per_tok = -gold
    else:
        rest = logprobs.sum(-1) - gold
        per_tok = -((1 - eps) * gold + eps / (K - 1) * rest)
    return (per_tok * keep).sum()
