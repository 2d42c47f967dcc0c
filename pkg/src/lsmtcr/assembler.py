"""Two-stage full-length chain generation.

Stage 1 classifies V and J gene labels from a CDR3 through a pooled
transformer encoder with separate classification heads. Stage 2 embeds the
gene pair into a fused context vector, prepends it to the encoded CDR3, and
generates the complete chain with a causal decoder that cross-attends to
the encoder output. The same machinery is instantiated per chain; training
uses ground-truth genes (teacher forcing) while the assembly pipeline feeds
Stage-1 predictions into Stage 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, backward, concat, mul, sum_
from .errors import ConfigError, DataError, ShapeError
from .layers import (
    EVAL_CTX,
    FwdCtx,
    GeluFeedForward,
    LayerNormParams,
    MultiHeadAttention,
    causal_forbidden,
    pad_forbidden,
    residual_dropout,
)
from .ops import cross_entropy_masked, cross_entropy_mean, dropout, embed, layer_norm, linear, xavier_uniform
from .optim import AdamW, ParamSet
from .vocab import BOS_ID, EOS_ID, PAD_ID, VOCAB_SIZE, GeneVocab, decode, encode, pad_batch

from .cdr3_gpt import sample_step


@dataclass(frozen=True)
class AssemblerConfig:
    d_model: int = 64
    n_heads: int = 4
    d_head: int = 16
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 256
    max_cdr3_len: int = 32
    max_chain_len: int = 160
    dropout: float = 0.1
    vocab_size: int = VOCAB_SIZE

    def meta(self) -> dict:
        return {
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "d_head": self.d_head,
            "n_enc_layers": self.n_enc_layers,
            "n_dec_layers": self.n_dec_layers,
            "d_ff": self.d_ff,
            "max_cdr3_len": self.max_cdr3_len,
            "max_chain_len": self.max_chain_len,
            "vocab_size": self.vocab_size,
        }


class _EncoderLayer:
    """Post-norm self-attention + GELU feed-forward."""

    def __init__(self, ps: ParamSet, prefix: str, cfg: AssemblerConfig, rng):
        self.attn = MultiHeadAttention(ps, f"{prefix}.attn", cfg.d_model, cfg.d_model,
                                       cfg.n_heads, cfg.d_head, rng)
        self.ln1 = LayerNormParams(ps, f"{prefix}.ln1", cfg.d_model)
        self.ffn = GeluFeedForward(ps, f"{prefix}.ffn", cfg.d_model, cfg.d_ff, rng)
        self.ln2 = LayerNormParams(ps, f"{prefix}.ln2", cfg.d_model)
        self.rate = cfg.dropout

    def __call__(self, h: Tensor, forbidden: np.ndarray, ctx: FwdCtx) -> Tensor:
        h = self.ln1(residual_dropout(h, self.attn(h, h, forbidden), self.rate, ctx))
        h = self.ln2(residual_dropout(h, self.ffn(h), self.rate, ctx))
        return h


def pool_valid(h: Tensor, valid: np.ndarray) -> Tensor:
    """Mean over non-pad rows; [B, S, D] -> [B, D]. Rejects all-pad rows."""
    counts = valid.sum(axis=1)
    if (counts == 0).any():
        raise ShapeError("pool_valid: a sequence has no non-pad positions")
    mask = Tensor(valid[:, :, None].astype(h.data.dtype))
    summed = sum_(mul(h, mask), axis=1)
    inv = Tensor((1.0 / counts)[:, None].astype(h.data.dtype))
    return mul(summed, inv)


class GenePredictor:
    """Stage 1: CDR3 tokens -> (V, J) label distributions."""

    def __init__(self, cfg: AssemblerConfig, genes: GeneVocab, seed: int = 0):
        if not genes.v_labels or not genes.j_labels:
            raise ConfigError("gene vocabulary is empty")
        self.cfg = cfg
        self.genes = genes
        self.params = ParamSet()
        rng = np.random.default_rng(seed)
        self.tok_emb = self.params.add("tok_emb", xavier_uniform((cfg.vocab_size, cfg.d_model), rng))
        self.pos_emb = self.params.add("pos_emb", xavier_uniform((cfg.max_cdr3_len, cfg.d_model), rng))
        self.layers = [_EncoderLayer(self.params, f"layers.{i}", cfg, rng)
                       for i in range(cfg.n_enc_layers)]
        self.wv = self.params.add("head_v.w", xavier_uniform((cfg.d_model, len(genes.v_labels)), rng), decay=True)
        self.bv = self.params.add("head_v.b", np.zeros(len(genes.v_labels), dtype=np.float32))
        self.wj = self.params.add("head_j.w", xavier_uniform((cfg.d_model, len(genes.j_labels)), rng), decay=True)
        self.bj = self.params.add("head_j.b", np.zeros(len(genes.j_labels), dtype=np.float32))

    def logits(self, ids: np.ndarray, ctx: FwdCtx = EVAL_CTX) -> tuple[Tensor, Tensor]:
        if ids.shape[1] > self.cfg.max_cdr3_len:
            raise ShapeError(f"CDR3 length {ids.shape[1]} exceeds max {self.cfg.max_cdr3_len}")
        valid = ids != PAD_ID
        forbidden = pad_forbidden(valid, valid)
        h = add(embed(ids, self.tok_emb, zero_pad=True), embed(np.arange(ids.shape[1]), self.pos_emb))
        for layer in self.layers:
            h = layer(h, forbidden, ctx)
        pooled = pool_valid(h, valid)
        return linear(pooled, self.wv, self.bv), linear(pooled, self.wj, self.bj)

    def predict(self, cdr3: str) -> tuple[np.ndarray, np.ndarray]:
        """Probability vectors (P_V, P_J) for one CDR3."""
        ids = pad_batch([encode(cdr3, "plain")])
        lv, lj = self.logits(ids, EVAL_CTX)

        def soft(x):
            z = x - x.max()
            e = np.exp(z)
            return e / e.sum()

        return soft(lv.data[0].astype(np.float64)), soft(lj.data[0].astype(np.float64))

    def predict_labels(self, cdr3: str) -> tuple[str, str]:
        pv, pj = self.predict(cdr3)
        return self.genes.v_labels[int(pv.argmax())], self.genes.j_labels[int(pj.argmax())]


def gene_loss(logits_v: Tensor, logits_j: Tensor, y_v: np.ndarray, y_j: np.ndarray) -> Tensor:
    """Unweighted sum of the two cross-entropy terms (batch means)."""
    if (np.asarray(y_v) >= logits_v.data.shape[-1]).any() or (np.asarray(y_j) >= logits_j.data.shape[-1]).any():
        raise DataError("gene label index outside vocabulary")
    return add(cross_entropy_mean(logits_v, y_v), cross_entropy_mean(logits_j, y_j))


class ChainAssembler:
    """Stage 2: (V, J, CDR3) -> full-length chain, encoder-decoder transformer."""

    def __init__(self, cfg: AssemblerConfig, genes: GeneVocab, seed: int = 0):
        if cfg.d_model % 2 != 0:
            raise ConfigError("gene embedding halves need an even d_model")
        self.cfg = cfg
        self.genes = genes
        self.params = ParamSet()
        rng = np.random.default_rng(seed)
        half = cfg.d_model // 2
        self.tok_emb = self.params.add("tok_emb", xavier_uniform((cfg.vocab_size, cfg.d_model), rng))
        self.enc_pos = self.params.add("enc_pos", xavier_uniform((cfg.max_cdr3_len, cfg.d_model), rng))
        self.dec_pos = self.params.add("dec_pos", xavier_uniform((cfg.max_chain_len + 2, cfg.d_model), rng))
        self.ev = self.params.add("gene.ev", xavier_uniform((len(genes.v_labels), half), rng))
        self.ej = self.params.add("gene.ej", xavier_uniform((len(genes.j_labels), half), rng))
        self.fuse_w = self.params.add("gene.fuse_w", xavier_uniform((cfg.d_model, cfg.d_model), rng), decay=True)
        self.fuse_b = self.params.add("gene.fuse_b", np.zeros(cfg.d_model, dtype=np.float32))
        self.fuse_ln = LayerNormParams(self.params, "gene.fuse_ln", cfg.d_model)
        self.enc_layers = [_EncoderLayer(self.params, f"enc.{i}", cfg, rng)
                           for i in range(cfg.n_enc_layers)]
        self.dec_self = []
        self.dec_cross = []
        self.dec_ffn = []
        self.dec_ln = []
        for i in range(cfg.n_dec_layers):
            self.dec_self.append(MultiHeadAttention(self.params, f"dec.{i}.self", cfg.d_model,
                                                    cfg.d_model, cfg.n_heads, cfg.d_head, rng))
            self.dec_cross.append(MultiHeadAttention(self.params, f"dec.{i}.cross", cfg.d_model,
                                                     cfg.d_model, cfg.n_heads, cfg.d_head, rng))
            self.dec_ffn.append(GeluFeedForward(self.params, f"dec.{i}.ffn", cfg.d_model, cfg.d_ff, rng))
            self.dec_ln.append([LayerNormParams(self.params, f"dec.{i}.ln{k}", cfg.d_model)
                                for k in (1, 2, 3)])
        self.w_out = self.params.add("out.w", xavier_uniform((cfg.d_model, cfg.vocab_size), rng), decay=True)
        self.b_out = self.params.add("out.b", np.zeros(cfg.vocab_size, dtype=np.float32))

    def embed_genes(self, v_idx: np.ndarray, j_idx: np.ndarray) -> Tensor:
        """Lookup, concatenate, fuse, normalize; [B] -> [B, d]."""
        if (np.asarray(v_idx) >= len(self.genes.v_labels)).any():
            raise DataError("V gene index outside vocabulary")
        if (np.asarray(j_idx) >= len(self.genes.j_labels)).any():
            raise DataError("J gene index outside vocabulary")
        gv = embed(np.asarray(v_idx), self.ev)
        gj = embed(np.asarray(j_idx), self.ej)
        fused = linear(concat([gv, gj], axis=-1), self.fuse_w, self.fuse_b)
        return layer_norm(fused, self.fuse_ln.gain, self.fuse_ln.bias)

    def encode(self, cdr3_ids: np.ndarray, v_idx: np.ndarray, j_idx: np.ndarray,
               ctx: FwdCtx = EVAL_CTX) -> tuple[Tensor, np.ndarray]:
        """Encoder over [gene context; embedded CDR3]; returns states and validity."""
        if cdr3_ids.shape[1] > self.cfg.max_cdr3_len:
            raise ShapeError(f"CDR3 length {cdr3_ids.shape[1]} exceeds max {self.cfg.max_cdr3_len}")
        from .autodiff import reshape

        b, s = cdr3_ids.shape
        g = reshape(self.embed_genes(v_idx, j_idx), (b, 1, self.cfg.d_model))
        h_cdr3 = add(embed(cdr3_ids, self.tok_emb, zero_pad=True), embed(np.arange(s), self.enc_pos))
        h = concat([g, h_cdr3], axis=1)
        valid = np.concatenate([np.ones((b, 1), dtype=bool), cdr3_ids != PAD_ID], axis=1)
        forbidden = pad_forbidden(valid, valid)
        for layer in self.enc_layers:
            h = layer(h, forbidden, ctx)
        return h, valid

    def decode_logits(self, target_ids: np.ndarray, enc_states: Tensor, enc_valid: np.ndarray,
                      ctx: FwdCtx = EVAL_CTX) -> Tensor:
        """Causal decoding over target tokens with cross-attention to the encoder."""
        if target_ids.shape[1] > self.cfg.max_chain_len + 2:
            raise ShapeError("target length exceeds decoder capacity")
        b, s = target_ids.shape
        valid = target_ids != PAD_ID
        self_forbidden = causal_forbidden(s)[None, None, :, :] | pad_forbidden(valid, valid)
        cross_forbidden = pad_forbidden(valid, enc_valid)
        h = add(embed(target_ids, self.tok_emb, zero_pad=True), embed(np.arange(s), self.dec_pos))
        for attn, cross, ffn, (ln1, ln2, ln3) in zip(self.dec_self, self.dec_cross,
                                                     self.dec_ffn, self.dec_ln):
            h = ln1(residual_dropout(h, attn(h, h, self_forbidden), self.cfg.dropout, ctx))
            h = ln2(residual_dropout(h, cross(h, enc_states, cross_forbidden), self.cfg.dropout, ctx))
            h = ln3(residual_dropout(h, ffn(h), self.cfg.dropout, ctx))
        return linear(h, self.w_out, self.b_out)

    def generate(self, cdr3: str, v_label: str, j_label: str,
                 temperature: float = 0.0, seed: int = 0) -> str:
        """Generate one full-length chain; greedy when temperature is 0."""
        cdr3_ids = pad_batch([encode(cdr3, "plain")])
        v_idx = np.array([self.genes.v_index(v_label)])
        j_idx = np.array([self.genes.j_index(j_label)])
        enc_states, enc_valid = self.encode(cdr3_ids, v_idx, j_idx, EVAL_CTX)
        rng = np.random.Generator(np.random.Philox(seed=np.random.SeedSequence([seed])))
        ids = np.array([[BOS_ID]], dtype=np.int64)
        for _ in range(self.cfg.max_chain_len + 1):
            logits = self.decode_logits(ids, enc_states, enc_valid, EVAL_CTX)
            tok = sample_step(logits.data[0, -1], temperature, rng)
            ids = np.concatenate([ids, [[tok]]], axis=1)
            if tok == EOS_ID:
                break
        return decode(ids[0])


def seq_loss(logits: Tensor, targets: np.ndarray, valid: np.ndarray) -> Tensor:
    """Generation loss over valid (non-pad) positions."""
    return cross_entropy_masked(logits, targets, valid)


@dataclass
class TwoStageTrainResult:
    stage1_losses: list[float]
    stage2_losses: list[float]
    skipped: int


def _complete_records(records, chain: str):
    out = []
    skipped = 0
    for rec in records:
        cdr3 = rec.cdr3_alpha if chain == "alpha" else rec.cdr3_beta
        v = rec.v_alpha if chain == "alpha" else rec.v_beta
        j = rec.j_alpha if chain == "alpha" else rec.j_beta
        full = rec.full_alpha if chain == "alpha" else rec.full_beta
        if None in (cdr3, v, j, full):
            skipped += 1
            continue
        out.append((cdr3, v, j, full))
    return out, skipped


def train_two_stage(records, chain: str, predictor: GenePredictor, assembler: ChainAssembler,
                    opt1: AdamW, opt2: AdamW, seed: int, epochs: int,
                    batch_size: int = 16, log=None) -> TwoStageTrainResult:
    """Train Stage 1 on (CDR3 -> V, J) and Stage 2 on (CDR3, true genes -> chain)."""
    if chain not in ("alpha", "beta"):
        raise ConfigError(f"chain must be alpha or beta, got {chain!r}")
    rows, skipped = _complete_records(records, chain)
    if not rows:
        raise DataError(f"no complete {chain}-chain records to train on")
    genes = predictor.genes
    cdr3_ids = pad_batch([encode(c, "plain") for c, _, _, _ in rows])
    chain_ids = pad_batch([encode(f, "bos_eos") for _, _, _, f in rows])
    v_idx = np.array([genes.v_index(v) for _, v, _, _ in rows])
    j_idx = np.array([genes.j_index(j) for _, _, j, _ in rows])
    s1_losses, s2_losses = [], []
    for epoch in range(epochs):
        order = np.random.default_rng(np.random.SeedSequence([seed, 0x25, epoch])).permutation(len(rows))
        e1, e2 = [], []
        for start in range(0, len(order), batch_size):
            sel = order[start:start + batch_size]
            c_width = int((cdr3_ids[sel] != PAD_ID).sum(axis=1).max())
            t_width = int((chain_ids[sel] != PAD_ID).sum(axis=1).max())
            cb = cdr3_ids[sel][:, :c_width]
            tb = chain_ids[sel][:, :t_width]

            ctx1 = FwdCtx(training=True, seed=seed + 1, step=opt1.step_count)
            lv, lj = predictor.logits(cb, ctx1)
            loss1 = gene_loss(lv, lj, v_idx[sel], j_idx[sel])
            predictor.params.zero_grads()
            backward(loss1)
            opt1.step()
            e1.append(float(loss1.data))

            ctx2 = FwdCtx(training=True, seed=seed + 2, step=opt2.step_count)
            enc_states, enc_valid = assembler.encode(cb, v_idx[sel], j_idx[sel], ctx2)
            inputs, targets = tb[:, :-1], tb[:, 1:]
            logits = assembler.decode_logits(inputs, enc_states, enc_valid, ctx2)
            loss2 = seq_loss(logits, targets, targets != PAD_ID)
            assembler.params.zero_grads()
            backward(loss2)
            opt2.step()
            e2.append(float(loss2.data))
            if log is not None:
                log.append((opt1.step_count, float(loss1.data) + float(loss2.data), opt1.current_lr()))
        s1_losses.append(float(np.mean(e1)))
        s2_losses.append(float(np.mean(e2)))
    return TwoStageTrainResult(stage1_losses=s1_losses, stage2_losses=s2_losses, skipped=skipped)


def assemble_pipeline(cdr3s: list[str], predictor: GenePredictor,
                      assembler: ChainAssembler) -> list[tuple[str, str, str]]:
    """Per CDR3: Stage-1 argmax genes, then Stage-2 greedy chain; order preserved."""
    out = []
    for cdr3 in cdr3s:
        v, j = predictor.predict_labels(cdr3)
        full = assembler.generate(cdr3, v, j, temperature=0.0)
        out.append((v, j, full))
    return out
