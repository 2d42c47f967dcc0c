"""Time-conditioned masked encoder for epitopes.

Training corrupts sequences under a linear masking-severity curriculum
indexed by a timestep t: the masking proportion rises from p_min at t=0 to
p_max at t=T, and at each step the first m(t) of a sequence's preselected
candidate positions (in a fixed seeded order) are replaced by MASK. The
nested-prefix construction makes the masked sets monotone in t for a fixed
seed. Decoding predicts only at masked positions through a GELU projection
and the transposed token embedding (weight tying).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, backward
from .data import MaskCandidates, preselect_mask_candidates, round_half_away
from .errors import ConfigError, DataError, ShapeError
from .layers import (
    EVAL_CTX,
    FwdCtx,
    GegluFeedForward,
    LayerNormParams,
    MultiHeadAttention,
    pad_forbidden,
    residual_dropout,
    sinusoidal_table,
    zero_pad_rows,
)
from .ops import cross_entropy_mean, dropout, embed, gelu, linear, xavier_uniform
from .optim import AdamW, ParamSet
from .vocab import MASK_ID, PAD_ID, VOCAB_SIZE, TokenSequence, encode, pad_batch


@dataclass(frozen=True)
class DiffusionSchedule:
    """Linear corruption schedule over timesteps 0..steps."""

    steps: int = 20
    p_min: float = 0.05
    p_max: float = 0.45
    p_ref: float = 0.15

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"schedule needs at least 1 step, got {self.steps}")
        if not (0.0 < self.p_min <= self.p_max <= 1.0):
            raise ConfigError(f"need 0 < p_min <= p_max <= 1, got ({self.p_min}, {self.p_max})")


def mask_proportion(t: int, schedule: DiffusionSchedule) -> float:
    """p(t) = p_min + (p_max - p_min) * t / T."""
    if not 0 <= t <= schedule.steps:
        raise ConfigError(f"timestep {t} outside [0, {schedule.steps}]")
    return schedule.p_min + (schedule.p_max - schedule.p_min) * t / schedule.steps


def active_mask_count(m_candidates: int, t: int, schedule: DiffusionSchedule) -> int:
    """m(t) = clamp(round(M * p(t) / p_ref), 1, M); monotone non-decreasing in t."""
    if m_candidates < 1:
        raise ConfigError(f"need at least one candidate position, got {m_candidates}")
    raw = round_half_away(m_candidates * mask_proportion(t, schedule) / schedule.p_ref)
    return min(max(raw, 1), m_candidates)


@dataclass
class MaskedExample:
    """One corrupted sequence: MASK written at the active positions only."""

    corrupted: list[int]
    original: list[int]
    active: list[int]
    t: int


def corrupt(tokens: TokenSequence, candidates: MaskCandidates, t: int,
            schedule: DiffusionSchedule, seed: int) -> MaskedExample:
    """Mask the first m(t) candidates under a seed-fixed ordering (nested in t)."""
    order = np.random.default_rng(seed).permutation(len(candidates.positions))
    m = active_mask_count(len(candidates.positions), t, schedule)
    active = [candidates.positions[i] for i in order[:m]]
    corrupted = list(tokens.ids)
    for pos in active:
        corrupted[pos] = MASK_ID
    return MaskedExample(corrupted=corrupted, original=list(tokens.ids), active=sorted(active), t=t)


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 64
    n_heads: int = 4
    d_head: int = 16
    n_layers: int = 2
    d_ff: int = 256
    max_len: int = 32
    time_steps: int = 20
    time_kind: str = "learned"  # or "sinusoidal"
    dropout: float = 0.1
    vocab_size: int = VOCAB_SIZE

    def meta(self) -> dict:
        return {
            "kind": "epitope_encoder",
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "d_head": self.d_head,
            "n_layers": self.n_layers,
            "d_ff": self.d_ff,
            "max_len": self.max_len,
            "time_steps": self.time_steps,
            "time_kind": self.time_kind,
            "vocab_size": self.vocab_size,
        }


class _EncoderLayer:
    def __init__(self, ps: ParamSet, prefix: str, cfg: EncoderConfig, rng):
        self.attn = MultiHeadAttention(ps, f"{prefix}.attn", cfg.d_model, cfg.d_model,
                                       cfg.n_heads, cfg.d_head, rng)
        self.ln1 = LayerNormParams(ps, f"{prefix}.ln1", cfg.d_model)
        self.ffn = GegluFeedForward(ps, f"{prefix}.ffn", cfg.d_model, cfg.d_ff, rng)
        self.ln2 = LayerNormParams(ps, f"{prefix}.ln2", cfg.d_model)
        self.rate = cfg.dropout

    def __call__(self, h: Tensor, forbidden: np.ndarray, ctx: FwdCtx) -> Tensor:
        h = self.ln1(residual_dropout(h, self.attn(h, h, forbidden), self.rate, ctx))
        h = self.ln2(residual_dropout(h, self.ffn(h), self.rate, ctx))
        return h


class EpitopeEncoder:
    """Bidirectional encoder over epitope tokens, conditioned on a timestep."""

    def __init__(self, cfg: EncoderConfig, seed: int = 0):
        self.cfg = cfg
        self.params = ParamSet()
        rng = np.random.default_rng(seed)
        self.tok_emb = self.params.add("tok_emb", xavier_uniform((cfg.vocab_size, cfg.d_model), rng))
        self.pos_emb = self.params.add("pos_emb", xavier_uniform((cfg.max_len, cfg.d_model), rng))
        if cfg.time_kind == "learned":
            self.time_emb = self.params.add(
                "time_emb", xavier_uniform((cfg.time_steps + 1, cfg.d_model), rng))
        elif cfg.time_kind == "sinusoidal":
            self.time_emb = Tensor(sinusoidal_table(cfg.time_steps + 1, cfg.d_model))
        else:
            raise ConfigError(f"unknown time embedding kind {cfg.time_kind!r}")
        self.layers = [_EncoderLayer(self.params, f"layers.{i}", cfg, rng)
                       for i in range(cfg.n_layers)]
        self.wc = self.params.add("decode.wc", xavier_uniform((cfg.d_model, cfg.d_model), rng), decay=True)
        self.bc = self.params.add("decode.bc", np.zeros(cfg.d_model, dtype=np.float32))

    def embed_with_time(self, ids: np.ndarray, t: int) -> Tensor:
        """Token + position + broadcast time embeddings, with pad rows zeroed."""
        if not 0 <= t <= self.cfg.time_steps:
            raise ConfigError(f"timestep {t} outside [0, {self.cfg.time_steps}]")
        seq = ids.shape[1]
        if seq > self.cfg.max_len:
            raise ShapeError(f"sequence length {seq} exceeds max_len {self.cfg.max_len}")
        tok = embed(ids, self.tok_emb)
        pos = embed(np.arange(seq), self.pos_emb)
        time_row = embed(np.array(t), self.time_emb)
        summed = add(add(tok, pos), time_row)
        return zero_pad_rows(summed, ids != PAD_ID)

    def encode(self, ids: np.ndarray, t: int, ctx: FwdCtx = EVAL_CTX) -> Tensor:
        valid = ids != PAD_ID
        forbidden = pad_forbidden(valid, valid)
        h = self.embed_with_time(ids, t)
        h = dropout(h, self.cfg.dropout, ctx.key(), ctx.training)
        for layer in self.layers:
            h = layer(h, forbidden, ctx)
        return h

    def mlm_logits(self, corrupted: np.ndarray, batch_idx: np.ndarray, pos_idx: np.ndarray,
                   t: int, ctx: FwdCtx = EVAL_CTX) -> Tensor:
        """Logits [K, vocab] at the masked positions only, via the tied decode path."""
        if len(batch_idx) == 0:
            raise DataError("mlm_logits: no masked positions")
        from .autodiff import gather_positions, matmul, transpose

        h = self.encode(corrupted, t, ctx)
        picked = gather_positions(h, batch_idx, pos_idx)
        z = gelu(linear(picked, self.wc, self.bc))
        return matmul(z, transpose(self.tok_emb, (1, 0)))

    def encode_epitope(self, epitope: str) -> tuple[np.ndarray, np.ndarray]:
        """Clean forward at t=0; returns (states [S, D], validity mask [S])."""
        ids = pad_batch([encode(epitope, "plain")], max_len=None)
        h = self.encode(ids, t=0, ctx=EVAL_CTX)
        return h.data[0], (ids[0] != PAD_ID)


def mlm_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Cross-entropy averaged over masked positions only."""
    return cross_entropy_mean(logits, targets)


def _per_sequence_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _prepare(corpus: list[str], max_len: int, seed: int):
    """Tokenize and preselect mask candidates once per corpus."""
    tokens = [encode(s, "plain") for s in corpus]
    for tk in tokens:
        if tk.length > max_len:
            raise DataError(f"epitope length {tk.length} exceeds max_len {max_len}")
    candidates = [preselect_mask_candidates(tk, _per_sequence_seed(seed, i))
                  for i, tk in enumerate(tokens)]
    return tokens, candidates


def _masked_batch_arrays(examples: list[MaskedExample]):
    seqs = [TokenSequence(ids=e.corrupted, length=len(e.corrupted)) for e in examples]
    ids = pad_batch(seqs)
    b_idx, s_idx, targets = [], [], []
    for row, e in enumerate(examples):
        for pos in e.active:
            b_idx.append(row)
            s_idx.append(pos)
            targets.append(e.original[pos])
    return ids, np.array(b_idx), np.array(s_idx), np.array(targets)


def train_epitope_encoder(corpus: list[str], model: EpitopeEncoder, opt: AdamW,
                          schedule: DiffusionSchedule, seed: int, epochs: int,
                          batch_size: int = 16, log=None) -> list[float]:
    """Curriculum MLM training; returns the mean loss per epoch."""
    if not corpus:
        raise DataError("empty training corpus")
    tokens, candidates = _prepare(corpus, model.cfg.max_len, seed)
    t_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD1F]))
    epoch_losses = []
    for epoch in range(epochs):
        order = np.random.default_rng(np.random.SeedSequence([seed, 0xE0C, epoch])).permutation(len(tokens))
        losses = []
        for start in range(0, len(order), batch_size):
            chosen = order[start:start + batch_size]
            t = int(t_rng.integers(0, schedule.steps + 1))
            examples = [corrupt(tokens[i], candidates[i], t, schedule, _per_sequence_seed(seed, i))
                        for i in chosen]
            ids, b_idx, s_idx, targets = _masked_batch_arrays(examples)
            ctx = FwdCtx(training=True, seed=seed, step=opt.step_count)
            loss = mlm_loss(model.mlm_logits(ids, b_idx, s_idx, t, ctx), targets)
            model.params.zero_grads()
            backward(loss)
            opt.step()
            losses.append(float(loss.data))
            if log is not None:
                log.append((opt.step_count, float(loss.data), opt.current_lr()))
        epoch_losses.append(float(np.mean(losses)))
    return epoch_losses


def validate(corpus: list[str], model: EpitopeEncoder, schedule: DiffusionSchedule,
             seed: int, batch_size: int = 16) -> tuple[float, float]:
    """Accuracy and loss at mid-curriculum corruption t_eval = floor(T/2)."""
    tokens, candidates = _prepare(corpus, model.cfg.max_len, seed)
    t_eval = schedule.steps // 2
    total, correct, loss_sum = 0, 0, 0.0
    for start in range(0, len(tokens), batch_size):
        chunk = range(start, min(start + batch_size, len(tokens)))
        examples = [corrupt(tokens[i], candidates[i], t_eval, schedule, _per_sequence_seed(seed, i))
                    for i in chunk]
        ids, b_idx, s_idx, targets = _masked_batch_arrays(examples)
        logits = model.mlm_logits(ids, b_idx, s_idx, t_eval, EVAL_CTX)
        pred = logits.data.argmax(axis=-1)
        correct += int((pred == targets).sum())
        total += len(targets)
        loss_sum += float(mlm_loss(logits, targets).data) * len(targets)
    return correct / total, loss_sum / total
