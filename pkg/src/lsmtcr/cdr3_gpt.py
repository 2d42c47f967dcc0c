"""Causal decoder for CDR3 sequences.

Pre-norm blocks with rotary position embedding on query/key, a gated GEGLU
feed-forward, and a weight-tied output projection. Conditioning on epitope
states is injected through gated cross-attention adapters after each
self-attention sublayer; the gates start at zero so a conditioned forward
is exactly the pretrained forward until fine-tuning moves them.

Sequences are BOS-prefixed and EOS-terminated. Sampling draws from
softmax(logits / tau) restricted to residue tokens plus EOS; tau = 0 is
greedy with ties broken toward the lowest token index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, backward, matmul, mul, transpose
from .errors import ConfigError, DataError, ManifestMismatch, ShapeError
from .layers import (
    EVAL_CTX,
    FwdCtx,
    GegluFeedForward,
    LayerNormParams,
    MultiHeadAttention,
    causal_forbidden,
    pad_forbidden,
    residual_dropout,
)
from .ops import cross_entropy_masked, dropout, embed, xavier_uniform
from .optim import AdamW, ParamSet
from .vocab import BOS_ID, EOS_ID, PAD_ID, VOCAB_SIZE, decode, encode, pad_batch

SAMPLED_TOKENS = np.array([i for i in range(1, 21)] + [EOS_ID])  # residues + EOS


@dataclass(frozen=True)
class DecoderConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_head: int = 16
    d_ff: int = 256
    max_len: int = 34  # tokens, BOS + residues + EOS
    dropout: float = 0.1
    vocab_size: int = VOCAB_SIZE
    cross_attend: bool = False
    d_cond: int = 0  # width of conditioning states when cross_attend

    def __post_init__(self):
        if self.d_head % 2 != 0:
            raise ConfigError(f"rotary embedding needs an even head width, got {self.d_head}")

    def meta(self) -> dict:
        return {
            "kind": "cdr3_decoder",
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_head": self.d_head,
            "d_ff": self.d_ff,
            "max_len": self.max_len,
            "vocab_size": self.vocab_size,
            "cross_attend": self.cross_attend,
            "d_cond": self.d_cond,
        }


class _DecoderBlock:
    def __init__(self, ps: ParamSet, prefix: str, cfg: DecoderConfig, rng):
        self.ln1 = LayerNormParams(ps, f"{prefix}.ln1", cfg.d_model)
        self.attn = MultiHeadAttention(ps, f"{prefix}.attn", cfg.d_model, cfg.d_model,
                                       cfg.n_heads, cfg.d_head, rng, rope=True)
        self.ln2 = LayerNormParams(ps, f"{prefix}.ln2", cfg.d_model)
        self.ffn = GegluFeedForward(ps, f"{prefix}.ffn", cfg.d_model, cfg.d_ff, rng)
        self.rate = cfg.dropout
        self.cross = None
        if cfg.cross_attend:
            self.lnx = LayerNormParams(ps, f"{prefix}.lnx", cfg.d_model)
            self.cross = MultiHeadAttention(ps, f"{prefix}.cross", cfg.d_model, cfg.d_cond,
                                            cfg.n_heads, cfg.d_head, rng)
            self.gate = ps.add(f"{prefix}.gate", np.zeros(1, dtype=np.float32))

    def __call__(self, h: Tensor, forbidden: np.ndarray, ctx: FwdCtx,
                 cond: Tensor | None, cond_forbidden: np.ndarray | None) -> Tensor:
        normed = self.ln1(h)
        h = residual_dropout(h, self.attn(normed, normed, forbidden), self.rate, ctx)
        if self.cross is not None and cond is not None:
            attended = self.cross(self.lnx(h), cond, cond_forbidden)
            h = add(h, mul(attended, self.gate))
        h = residual_dropout(h, self.ffn(self.ln2(h)), self.rate, ctx)
        return h


def combined_mask(ids: np.ndarray) -> np.ndarray:
    """Forbid (i, j) when j > i or either position is padding; [B, 1, S, S]."""
    ids = np.atleast_2d(ids)
    valid = ids != PAD_ID
    return causal_forbidden(ids.shape[1])[None, None, :, :] | pad_forbidden(valid, valid)


class Cdr3Decoder:
    def __init__(self, cfg: DecoderConfig, seed: int = 0):
        if cfg.cross_attend and cfg.d_cond <= 0:
            raise ConfigError("cross-attending decoder needs d_cond > 0")
        self.cfg = cfg
        self.params = ParamSet()
        rng = np.random.default_rng(seed)
        self.tok_emb = self.params.add("tok_emb", xavier_uniform((cfg.vocab_size, cfg.d_model), rng))
        self.ln_in = LayerNormParams(self.params, "ln_in", cfg.d_model)
        self.blocks = [_DecoderBlock(self.params, f"blocks.{i}", cfg, rng)
                       for i in range(cfg.n_layers)]
        self.ln_f = LayerNormParams(self.params, "ln_f", cfg.d_model)

    def forward(self, ids: np.ndarray, ctx: FwdCtx = EVAL_CTX,
                cond: np.ndarray | Tensor | None = None,
                cond_valid: np.ndarray | None = None) -> Tensor:
        """Logits [B, S, vocab]; cond is [B, S_e, d_cond] epitope states."""
        if ids.shape[1] > self.cfg.max_len:
            raise ShapeError(f"sequence length {ids.shape[1]} exceeds max_len {self.cfg.max_len}")
        forbidden = combined_mask(ids)
        cond_t, cond_forbidden = None, None
        if cond is not None:
            if not self.cfg.cross_attend:
                raise ConfigError("decoder was built without cross-attention adapters")
            cond_t = cond if isinstance(cond, Tensor) else Tensor(np.asarray(cond, dtype=np.float32))
            if cond_valid is None:
                cond_valid = np.ones(cond_t.data.shape[:2], dtype=bool)
            cond_forbidden = pad_forbidden(ids != PAD_ID, cond_valid)
        h = embed(ids, self.tok_emb, zero_pad=True)
        h = dropout(self.ln_in(h), self.cfg.dropout, ctx.key(), ctx.training)
        for block in self.blocks:
            h = block(h, forbidden, ctx, cond_t, cond_forbidden)
        h = self.ln_f(h)
        return matmul(h, transpose(self.tok_emb, (1, 0)))


def lm_loss(logits: Tensor, targets: np.ndarray, valid: np.ndarray) -> Tensor:
    """Causal LM loss: -(1/Z) sum of log-probabilities over valid positions."""
    return cross_entropy_masked(logits, targets, valid)


def _sequence_batch(seqs: list[str], max_len: int) -> np.ndarray:
    toks = [encode(s, "bos_eos") for s in seqs]
    for t in toks:
        if t.length > max_len:
            raise DataError(f"sequence length {t.length} exceeds decoder max_len {max_len}")
    return pad_batch(toks)


def batch_lm_loss(model: Cdr3Decoder, ids: np.ndarray, ctx: FwdCtx,
                  cond: np.ndarray | None = None, cond_valid: np.ndarray | None = None) -> Tensor:
    inputs = ids[:, :-1]
    targets = ids[:, 1:]
    valid = targets != PAD_ID
    cond_v = cond_valid
    logits = model.forward(inputs, ctx, cond, cond_v)
    return lm_loss(logits, targets, valid)


def pretrain(corpus: list[str], model: Cdr3Decoder, opt: AdamW, seed: int,
             epochs: int, batch_size: int = 16, log=None) -> list[float]:
    """Next-token training on a CDR3 corpus; returns mean loss per epoch."""
    if not corpus:
        raise DataError("empty training corpus")
    ids_all = _sequence_batch(corpus, model.cfg.max_len)
    epoch_losses = []
    for epoch in range(epochs):
        order = np.random.default_rng(np.random.SeedSequence([seed, 0xA11, epoch])).permutation(len(corpus))
        losses = []
        for start in range(0, len(order), batch_size):
            rows = order[start:start + batch_size]
            batch = ids_all[rows]
            width = int((batch != PAD_ID).sum(axis=1).max())
            ctx = FwdCtx(training=True, seed=seed, step=opt.step_count)
            loss = batch_lm_loss(model, batch[:, :width], ctx)
            model.params.zero_grads()
            backward(loss)
            opt.step()
            losses.append(float(loss.data))
            if log is not None:
                log.append((opt.step_count, float(loss.data), opt.current_lr()))
        epoch_losses.append(float(np.mean(losses)))
    return epoch_losses


def corpus_loss(corpus: list[str], model: Cdr3Decoder, batch_size: int = 32) -> float:
    """Per-token evaluation loss, no dropout, no updates."""
    ids_all = _sequence_batch(corpus, model.cfg.max_len)
    total_loss, total_tokens = 0.0, 0
    for start in range(0, len(corpus), batch_size):
        batch = ids_all[start:start + batch_size]
        n_tokens = int((batch[:, 1:] != PAD_ID).sum())
        loss = batch_lm_loss(model, batch, EVAL_CTX)
        total_loss += float(loss.data) * n_tokens
        total_tokens += n_tokens
    return total_loss / total_tokens


def load_into(model: Cdr3Decoder, arrays: dict[str, np.ndarray], allow_missing: tuple = ()):
    """Copy checkpoint arrays into model parameters by name, validating shapes."""
    from .checkpoint import load_params

    load_params(model.params, arrays, allow_missing)


def transfer_to_alpha(beta_arrays: dict[str, np.ndarray], beta_meta: dict,
                      alpha_corpus: list[str], cfg: DecoderConfig, opt_kwargs: dict,
                      seed: int, epochs: int, batch_size: int = 16, log=None) -> Cdr3Decoder:
    """Initialize from beta weights and continue training on the alpha corpus."""
    for key in ("d_model", "n_layers", "n_heads", "d_head", "d_ff", "vocab_size"):
        if beta_meta.get(key) != getattr(cfg, key):
            raise ManifestMismatch(
                f"checkpoint {key} mismatch: checkpoint has {beta_meta.get(key)!r}, expected {getattr(cfg, key)!r}")
    model = Cdr3Decoder(cfg, seed=seed)
    load_into(model, beta_arrays)
    if epochs > 0:
        opt = AdamW(model.params, **opt_kwargs)
        pretrain(alpha_corpus, model, opt, seed=seed, epochs=epochs, batch_size=batch_size, log=log)
    return model


@dataclass(frozen=True)
class FreezePolicy:
    """Glob patterns for parameters held fixed during conditional fine-tuning."""

    patterns: tuple[str, ...]

    def apply(self, model: Cdr3Decoder):
        model.params.freeze(list(self.patterns))


def default_freeze_policy(n_layers: int) -> FreezePolicy:
    """Freeze the token embedding and the lower half of the block stack."""
    patterns = ["tok_emb", "ln_in.*"]
    for i in range(n_layers // 2):
        patterns += [f"blocks.{i}.ln1.*", f"blocks.{i}.attn.*",
                     f"blocks.{i}.ln2.*", f"blocks.{i}.ffn.*"]
    return FreezePolicy(patterns=tuple(patterns))


class EpitopeStateCache:
    """Memoized clean-epitope encodings shared across fine-tuning epochs."""

    def __init__(self, encoder):
        self.encoder = encoder
        self._cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def get(self, epitope: str) -> tuple[np.ndarray, np.ndarray]:
        if epitope not in self._cache:
            self._cache[epitope] = self.encoder.encode_epitope(epitope)
        return self._cache[epitope]

    def batch(self, epitopes: list[str]) -> tuple[np.ndarray, np.ndarray]:
        states = [self.get(e) for e in epitopes]
        width = max(s.shape[0] for s, _ in states)
        d = states[0][0].shape[1]
        cond = np.zeros((len(states), width, d), dtype=np.float32)
        valid = np.zeros((len(states), width), dtype=bool)
        for i, (s, v) in enumerate(states):
            cond[i, : s.shape[0]] = s
            valid[i, : v.shape[0]] = v
        return cond, valid


def finetune_conditional(pairs: list[tuple[str, str]], encoder, model: Cdr3Decoder,
                         policy: FreezePolicy, opt: AdamW, seed: int, epochs: int,
                         batch_size: int = 16, log=None) -> list[float]:
    """Train the conditioned decoder on (epitope, CDR3) pairs under the freeze policy."""
    if not pairs:
        raise DataError("empty fine-tuning pair set")
    if not model.cfg.cross_attend:
        raise ConfigError("fine-tuning requires a decoder with cross-attention adapters")
    policy.apply(model)
    cache = EpitopeStateCache(encoder)
    ids_all = _sequence_batch([c for _, c in pairs], model.cfg.max_len)
    epitopes = [e for e, _ in pairs]
    epoch_losses = []
    for epoch in range(epochs):
        order = np.random.default_rng(np.random.SeedSequence([seed, 0xF1E, epoch])).permutation(len(pairs))
        losses = []
        for start in range(0, len(order), batch_size):
            rows = order[start:start + batch_size]
            batch = ids_all[rows]
            width = int((batch != PAD_ID).sum(axis=1).max())
            cond, cond_valid = cache.batch([epitopes[i] for i in rows])
            ctx = FwdCtx(training=True, seed=seed, step=opt.step_count)
            loss = batch_lm_loss(model, batch[:, :width], ctx, cond, cond_valid)
            model.params.zero_grads()
            backward(loss)
            opt.step()
            losses.append(float(loss.data))
            if log is not None:
                log.append((opt.step_count, float(loss.data), opt.current_lr()))
        epoch_losses.append(float(np.mean(losses)))
    return epoch_losses


@dataclass(frozen=True)
class SamplerConfig:
    temperature: float = 1.0
    max_len: int = 32  # residues, excluding BOS/EOS
    n_samples: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")


@dataclass
class GeneratedSequence:
    cdr3: str
    logprob: float  # model log-probability (tau = 1) of the emitted tokens


def sample_step(logits_row: np.ndarray, temperature: float, rng: np.random.Generator | None) -> int:
    """Draw one token id from the restricted support; greedy when temperature is 0."""
    restricted = logits_row[SAMPLED_TOKENS].astype(np.float64)
    if temperature == 0.0:
        return int(SAMPLED_TOKENS[int(np.argmax(restricted))])
    z = restricted / temperature
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    return int(SAMPLED_TOKENS[rng.choice(len(SAMPLED_TOKENS), p=p)])


def generate(epitope: str | None, encoder, model: Cdr3Decoder,
             sampler: SamplerConfig) -> list[GeneratedSequence]:
    """Autoregressive sampling; conditioned when an epitope and encoder are given."""
    n = sampler.n_samples
    cond = cond_valid = None
    if epitope is not None:
        if encoder is None:
            raise ConfigError("conditioned generation requires an epitope encoder")
        states, valid = encoder.encode_epitope(epitope)
        cond = np.broadcast_to(states, (n,) + states.shape).copy()
        cond_valid = np.broadcast_to(valid, (n,) + valid.shape).copy()
    rngs = [np.random.Generator(np.random.Philox(seed=np.random.SeedSequence([sampler.seed, i])))
            for i in range(n)]
    ids = np.full((n, 1), BOS_ID, dtype=np.int64)
    logprobs = np.zeros(n, dtype=np.float64)
    done = np.zeros(n, dtype=bool)
    max_tokens = min(sampler.max_len + 1, model.cfg.max_len - 1)  # residues + EOS
    for _ in range(max_tokens):
        logits = model.forward(ids, EVAL_CTX, cond, cond_valid).data[:, -1, :]
        logp = logits - logits.max(axis=-1, keepdims=True)
        logp = logp - np.log(np.exp(logp).sum(axis=-1, keepdims=True))
        next_ids = np.full(n, PAD_ID, dtype=np.int64)
        for row in range(n):
            if done[row]:
                continue
            tok = sample_step(logits[row], sampler.temperature, rngs[row])
            next_ids[row] = tok
            logprobs[row] += float(logp[row, tok])
            if tok == EOS_ID:
                done[row] = True
        ids = np.concatenate([ids, next_ids[:, None]], axis=1)
        if done.all():
            break
    out = []
    for row in range(n):
        out.append(GeneratedSequence(cdr3=decode(ids[row]), logprob=float(logprobs[row])))
    return out
