"""Transformer building blocks shared by the three model families.

Each block registers its weights in a ParamSet under a dotted prefix and acts
as a callable on [batch, seq, width] tensors. Attention masks use the
forbidden-pair convention (True = no attention).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, add, mul, reshape, transpose
from .ops import dropout, gelu, geglu, layer_norm, linear, masked_attention, rope_rotate, xavier_uniform
from .optim import ParamSet


@dataclass
class FwdCtx:
    """Per-forward dropout context; keys are (seed, step, call-site counter)."""

    training: bool = False
    seed: int = 0
    step: int = 0
    _site: int = field(default=0, init=False)

    def key(self) -> tuple:
        self._site += 1
        return (self.seed, self.step, self._site)


EVAL_CTX = FwdCtx(training=False)


class LayerNormParams:
    def __init__(self, ps: ParamSet, prefix: str, width: int):
        self.gain = ps.add(f"{prefix}.gain", np.ones(width, dtype=np.float32))
        self.bias = ps.add(f"{prefix}.bias", np.zeros(width, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


class MultiHeadAttention:
    """Projection bundle for self- or cross-attention, optionally with RoPE on q/k."""

    def __init__(self, ps: ParamSet, prefix: str, d_query: int, d_kv: int,
                 n_heads: int, d_head: int, rng: np.random.Generator, rope: bool = False):
        self.n_heads = n_heads
        self.d_head = d_head
        self.rope = rope
        inner = n_heads * d_head
        self.wq = ps.add(f"{prefix}.wq", xavier_uniform((d_query, inner), rng), decay=True)
        self.bq = ps.add(f"{prefix}.bq", np.zeros(inner, dtype=np.float32))
        self.wk = ps.add(f"{prefix}.wk", xavier_uniform((d_kv, inner), rng), decay=True)
        self.bk = ps.add(f"{prefix}.bk", np.zeros(inner, dtype=np.float32))
        self.wv = ps.add(f"{prefix}.wv", xavier_uniform((d_kv, inner), rng), decay=True)
        self.bv = ps.add(f"{prefix}.bv", np.zeros(inner, dtype=np.float32))
        self.wo = ps.add(f"{prefix}.wo", xavier_uniform((inner, d_query), rng), decay=True)
        self.bo = ps.add(f"{prefix}.bo", np.zeros(d_query, dtype=np.float32))

    def _split(self, x: Tensor, batch: int, seq: int) -> Tensor:
        return transpose(reshape(x, (batch, seq, self.n_heads, self.d_head)), (0, 2, 1, 3))

    def __call__(self, x_q: Tensor, x_kv: Tensor, forbidden: np.ndarray,
                 q_positions: np.ndarray | None = None,
                 k_positions: np.ndarray | None = None) -> Tensor:
        b, s_q = x_q.data.shape[0], x_q.data.shape[1]
        s_k = x_kv.data.shape[1]
        q = self._split(linear(x_q, self.wq, self.bq), b, s_q)
        k = self._split(linear(x_kv, self.wk, self.bk), b, s_k)
        v = self._split(linear(x_kv, self.wv, self.bv), b, s_k)
        if self.rope:
            q = rope_rotate(q, q_positions if q_positions is not None else np.arange(s_q))
            k = rope_rotate(k, k_positions if k_positions is not None else np.arange(s_k))
        ctx = masked_attention(q, k, v, forbidden)  # [B, H, S_q, d]
        merged = reshape(transpose(ctx, (0, 2, 1, 3)), (b, s_q, self.n_heads * self.d_head))
        return linear(merged, self.wo, self.bo)


class GegluFeedForward:
    """Gated feed-forward core: (GELU(x W_a + b_a) * (x W_b + b_b)) W_o + b_o."""

    def __init__(self, ps: ParamSet, prefix: str, width: int, hidden: int, rng: np.random.Generator):
        self.wa = ps.add(f"{prefix}.wa", xavier_uniform((width, hidden), rng), decay=True)
        self.ba = ps.add(f"{prefix}.ba", np.zeros(hidden, dtype=np.float32))
        self.wb = ps.add(f"{prefix}.wb", xavier_uniform((width, hidden), rng), decay=True)
        self.bb = ps.add(f"{prefix}.bb", np.zeros(hidden, dtype=np.float32))
        self.wo = ps.add(f"{prefix}.wo", xavier_uniform((hidden, width), rng), decay=True)
        self.bo = ps.add(f"{prefix}.bo", np.zeros(width, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return geglu(x, self.wa, self.ba, self.wb, self.bb, self.wo, self.bo)


class GeluFeedForward:
    """Plain two-layer feed-forward: GELU(x W_1 + b_1) W_2 + b_2."""

    def __init__(self, ps: ParamSet, prefix: str, width: int, hidden: int, rng: np.random.Generator):
        self.w1 = ps.add(f"{prefix}.w1", xavier_uniform((width, hidden), rng), decay=True)
        self.b1 = ps.add(f"{prefix}.b1", np.zeros(hidden, dtype=np.float32))
        self.w2 = ps.add(f"{prefix}.w2", xavier_uniform((hidden, width), rng), decay=True)
        self.b2 = ps.add(f"{prefix}.b2", np.zeros(width, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return linear(gelu(linear(x, self.w1, self.b1)), self.w2, self.b2)


def pad_forbidden(valid_q: np.ndarray, valid_k: np.ndarray) -> np.ndarray:
    """Forbid (i, j) when either the query or the key position is padding.

    valid_*: bool [B, S]; returns [B, 1, S_q, S_k] for broadcasting over heads.
    """
    forb = ~(valid_q[:, :, None] & valid_k[:, None, :])
    return forb[:, None, :, :]


def causal_forbidden(seq: int) -> np.ndarray:
    """Upper-triangular mask: position i may not attend to j > i."""
    return np.triu(np.ones((seq, seq), dtype=bool), k=1)


def residual_dropout(x: Tensor, sublayer_out: Tensor, rate: float, ctx: FwdCtx) -> Tensor:
    return add(x, dropout(sublayer_out, rate, ctx.key(), ctx.training))


def zero_pad_rows(x: Tensor, valid: np.ndarray) -> Tensor:
    """Multiply rows at padding positions by zero (keeps the graph differentiable)."""
    mask = Tensor(valid[:, :, None].astype(x.data.dtype))
    return mul(x, mask)


def sinusoidal_table(rows: int, width: int) -> np.ndarray:
    """Fixed sin/cos code table, one row per index; width must be even."""
    if width % 2 != 0:
        raise ValueError(f"sinusoidal table width must be even, got {width}")
    pos = np.arange(rows, dtype=np.float64)[:, None]
    i = np.arange(width // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / width)
    table = np.zeros((rows, width), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table.astype(np.float32)
