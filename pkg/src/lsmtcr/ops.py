"""Differentiable neural-network kernels built on the autodiff tape.

Conventions: attention masks are boolean arrays where True marks a FORBIDDEN
(query, key) pair; layer norm works over the last axis with epsilon 1e-5;
GELU uses the exact erf form; rotary embedding uses the standard
norm-preserving rotation on (even, odd) dimension pairs.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .autodiff import Tensor, _accumulate, as_tensor, make_op
from .errors import ShapeError

LAYER_NORM_EPS = 1e-5
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """x * Phi(x) with Phi the standard normal CDF (exact erf form)."""
    x = as_tensor(x)
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / np.sqrt(xd.dtype.type(2.0))))
    out = xd * cdf

    def bwd(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        _accumulate(x, g * (cdf + xd * pdf).astype(xd.dtype, copy=False))

    return make_op(out, (x,), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b with w of shape [fan_in, fan_out]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(f"linear: input width {x.data.shape[-1]} != weight fan-in {w.data.shape[0]}")
    from .autodiff import add, matmul

    out = matmul(x, w)
    if b is not None:
        if b.data.shape[-1] != w.data.shape[-1]:
            raise ShapeError(f"linear: bias width {b.data.shape[-1]} != weight fan-out {w.data.shape[-1]}")
        out = add(out, b)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        _accumulate(bias, g.reshape(-1, d).sum(axis=0))
        _accumulate(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        gx_hat = g * gain.data
        m1 = gx_hat.mean(axis=-1, keepdims=True)
        m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, (gx_hat - m1 - xhat * m2) * inv)

    return make_op(out, (x, gain, bias), bwd)


def embed(ids: np.ndarray, table: Tensor, zero_pad: bool = False, pad_id: int = 0) -> Tensor:
    """Row lookup; with zero_pad, rows at pad positions are zeroed in the output."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    out = table.data[ids]
    pad_mask = None
    if zero_pad:
        pad_mask = ids == pad_id
        out = out.copy()
        out[pad_mask] = 0.0

    def bwd(g):
        if pad_mask is not None:
            g = np.where(pad_mask[..., None], 0.0, g)
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        _accumulate(table, gt)

    return make_op(out, (table,), bwd)


def dropout(x: Tensor, rate: float, rng_key: tuple, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is 0.

    rng_key is a tuple of ints hashed into a counter-based Philox stream so a
    fixed (seed, step, site) triple always draws the same mask.
    """
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout rate must be in [0, 1), got {rate}")
    rng = np.random.Generator(np.random.Philox(seed=np.random.SeedSequence(list(rng_key))))
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    factor = x.data.dtype.type(1.0 / (1.0 - rate))
    out = x.data * keep * factor

    def bwd(g):
        _accumulate(x, g * keep * factor)

    return make_op(out, (x,), bwd)


def rope_rotate(x: Tensor, positions: np.ndarray, base: float = 10000.0) -> Tensor:
    """Rotate (even, odd) pairs of the last axis by theta(t, i) = t / base^(2i/d).

    positions indexes the second-to-last axis; the rotation preserves pair
    norms and makes q.k inner products depend only on relative offsets.
    """
    x = as_tensor(x)
    d = x.data.shape[-1]
    if d % 2 != 0:
        raise ShapeError(f"rope_rotate requires an even last dimension, got {d}")
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape[-1] != x.data.shape[-2]:
        raise ShapeError("rope_rotate: positions must match the sequence axis")
    half = d // 2
    freqs = base ** (-np.arange(half, dtype=np.float64) * 2.0 / d)
    theta = positions[..., :, None] * freqs  # [..., S, d/2]
    cos = np.cos(theta).astype(x.data.dtype)
    sin = np.sin(theta).astype(x.data.dtype)
    even = x.data[..., 0::2]
    odd = x.data[..., 1::2]
    out = np.empty_like(x.data)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos

    def bwd(g):
        ge = g[..., 0::2]
        go = g[..., 1::2]
        gx = np.empty_like(x.data)
        gx[..., 0::2] = ge * cos + go * sin
        gx[..., 1::2] = -ge * sin + go * cos
        _accumulate(x, gx)

    return make_op(out, (x,), bwd)


def masked_softmax(logits: Tensor, forbidden: np.ndarray) -> Tensor:
    """Softmax over the last axis with forbidden entries at exactly 0.

    Rows where every entry is forbidden come out all-zero instead of NaN;
    rows with at least one allowed entry sum to 1.
    """
    logits = as_tensor(logits)
    forbidden = np.broadcast_to(np.asarray(forbidden, dtype=bool), logits.data.shape)
    masked = np.where(forbidden, -np.inf, logits.data)
    row_max = masked.max(axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)  # all-forbidden rows
    expv = np.exp(masked - row_max).astype(logits.data.dtype)  # exp(-inf) = 0 exactly
    denom = expv.sum(axis=-1, keepdims=True)
    safe = np.where(denom == 0.0, 1.0, denom)
    out = expv / safe

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        _accumulate(logits, out * (g - dot))

    return make_op(out, (logits,), bwd)


def masked_attention(q: Tensor, k: Tensor, v: Tensor, forbidden: np.ndarray) -> Tensor:
    """Scaled dot-product attention with a boolean forbidden-pair mask.

    q, k, v: [..., S, d]; forbidden broadcasts to [..., S_q, S_k]. Queries with
    no allowed key produce a zero context vector.
    """
    from .autodiff import matmul, scale, transpose

    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d_k = q.data.shape[-1]
    if k.data.shape[-1] != d_k:
        raise ShapeError("masked_attention: q and k widths differ")
    axes = list(range(k.data.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    scores = scale(matmul(q, transpose(k, axes)), 1.0 / math.sqrt(d_k))
    weights = masked_softmax(scores, forbidden)
    return matmul(weights, v)


def log_softmax(x: Tensor) -> Tensor:
    """Numerically stable log-softmax over the last axis."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - logsum
    soft = np.exp(out)

    def bwd(g):
        _accumulate(x, g - soft * g.sum(axis=-1, keepdims=True))

    return make_op(out, (x,), bwd)


def geglu(x: Tensor, w_a: Tensor, b_a: Tensor, w_b: Tensor, b_b: Tensor,
          w_o: Tensor, b_o: Tensor) -> Tensor:
    """Gated feed-forward core: (GELU(x W_a + b_a) * (x W_b + b_b)) W_o + b_o."""
    from .autodiff import mul

    gate = gelu(linear(x, w_a, b_a))
    value = linear(x, w_b, b_b)
    return linear(mul(gate, value), w_o, b_o)


def geglu_ffn(x: Tensor, w_a: Tensor, b_a: Tensor, w_b: Tensor, b_b: Tensor,
              w_o: Tensor, b_o: Tensor, gain: Tensor, bias: Tensor,
              dropout_rate: float = 0.0, rng_key: tuple = (0,), training: bool = False) -> Tensor:
    """Post-norm gated block: LayerNorm(Dropout(geglu(x)) + x)."""
    from .autodiff import add

    y = geglu(x, w_a, b_a, w_b, b_b, w_o, b_o)
    y = dropout(y, dropout_rate, rng_key, training)
    return layer_norm(add(y, x), gain, bias)


# -- losses ------------------------------------------------------------------


def cross_entropy_mean(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over rows; logits [K, V], targets [K]."""
    from .autodiff import mean_, scale, take_last_axis

    if logits.data.shape[0] == 0:
        raise ShapeError("cross_entropy_mean: no rows")
    logp = log_softmax(logits)
    picked = take_last_axis(logp, np.asarray(targets))
    return scale(mean_(picked), -1.0)


def cross_entropy_masked(logits: Tensor, targets: np.ndarray, valid: np.ndarray) -> Tensor:
    """Masked mean NLL: -(1/Z) sum over valid positions; logits [..., V]."""
    from .autodiff import mul, scale, sum_, take_last_axis

    valid = np.asarray(valid)
    z = float(valid.sum())
    if z == 0:
        raise ShapeError("cross_entropy_masked: no valid positions")
    logp = log_softmax(logits)
    picked = take_last_axis(logp, np.asarray(targets))
    masked = mul(picked, Tensor(valid.astype(logits.data.dtype)))
    return scale(sum_(masked), -1.0 / z)


# -- initialization -----------------------------------------------------------


def xavier_uniform(shape: tuple, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = shape[0], shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
