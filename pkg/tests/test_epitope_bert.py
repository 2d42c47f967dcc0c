import numpy as np
import pytest

from lsmtcr.autodiff import Tensor, backward
from lsmtcr.data import preselect_mask_candidates
from lsmtcr.epitope_bert import (
    DiffusionSchedule,
    EncoderConfig,
    EpitopeEncoder,
    active_mask_count,
    corrupt,
    mask_proportion,
    mlm_loss,
    train_epitope_encoder,
    validate,
)
from lsmtcr.errors import ConfigError, DataError
from lsmtcr.optim import AdamW, cast_params
from lsmtcr.vocab import MASK_ID, encode, encode_batch

SCHED = DiffusionSchedule(steps=20, p_min=0.05, p_max=0.45)

TINY = EncoderConfig(d_model=16, n_heads=2, d_head=8, n_layers=2, d_ff=32,
                     max_len=16, time_steps=20, dropout=0.0)


def test_mask_proportion_endpoints_and_midpoint():
    assert mask_proportion(0, SCHED) == SCHED.p_min
    assert mask_proportion(SCHED.steps, SCHED) == SCHED.p_max
    assert mask_proportion(10, SCHED) == pytest.approx((SCHED.p_min + SCHED.p_max) / 2)
    with pytest.raises(ConfigError):
        mask_proportion(21, SCHED)


def test_active_mask_count_examples():
    sched = DiffusionSchedule(steps=20, p_min=0.05, p_max=0.45)
    # M=6, p(t)=0.05 -> round(6*0.05/0.15) = 2
    assert active_mask_count(6, 0, sched) == 2
    # M=6, p(t)=0.45 -> round(18) -> clamp to 6
    assert active_mask_count(6, sched.steps, sched) == 6
    assert active_mask_count(1, 0, sched) == 1
    assert active_mask_count(1, sched.steps, sched) == 1


def test_active_mask_count_monotone_exhaustive():
    for m in range(1, 65):
        prev = 0
        for t in range(0, SCHED.steps + 1):
            cur = active_mask_count(m, t, SCHED)
            assert 1 <= cur <= m
            assert cur >= prev
            prev = cur


def test_corrupt_nested_prefixes():
    tokens = encode("ACDEFGHIKLMNPQRSTVWY")
    cands = preselect_mask_candidates(tokens, seed=5)
    previous = set()
    for t in range(0, SCHED.steps + 1):
        ex = corrupt(tokens, cands, t, SCHED, seed=9)
        active = set(ex.active)
        assert previous <= active
        previous = active
        for pos in range(tokens.length):
            if pos in active:
                assert ex.corrupted[pos] == MASK_ID
            else:
                assert ex.corrupted[pos] == tokens.ids[pos]


def test_corrupt_full_and_single():
    tokens = encode("ACDEFGHIKLMNPQRSTVWY")
    cands = preselect_mask_candidates(tokens, seed=5)
    full = corrupt(tokens, cands, SCHED.steps, SCHED, seed=9)
    assert set(full.active) == set(cands.positions)
    one = corrupt(tokens, cands, 0, SCHED, seed=9)
    assert len(one.active) == active_mask_count(cands.count, 0, SCHED)


def test_embed_with_time_pads_zeroed_and_additive():
    model = EpitopeEncoder(TINY, seed=0)
    ids = encode_batch(["ACDE", "AC"])
    out = model.embed_with_time(ids, t=3)
    assert np.allclose(out.data[1, 2:], 0.0)
    out2 = model.embed_with_time(ids, t=7)
    delta = model.time_emb.data[7] - model.time_emb.data[3]
    diff = out2.data - out.data
    assert np.allclose(diff[0], np.broadcast_to(delta, diff[0].shape), atol=1e-6)
    assert np.allclose(diff[1, 2:], 0.0)


def test_forward_mlm_shape_and_empty_rejection():
    model = EpitopeEncoder(TINY, seed=0)
    ids = encode_batch(["ACDEF", "ACD"])
    logits = model.mlm_logits(ids, np.array([0, 0, 1]), np.array([1, 3, 0]), t=2)
    assert logits.data.shape == (3, TINY.vocab_size)
    with pytest.raises(DataError):
        model.mlm_logits(ids, np.array([], dtype=int), np.array([], dtype=int), t=2)


def test_pad_columns_leave_masked_logits_unchanged():
    model = cast_params(EpitopeEncoder(TINY, seed=1), np.float64)
    ids = encode_batch(["ACDEFG"])
    padded = np.concatenate([ids, np.zeros((1, 4), dtype=ids.dtype)], axis=1)
    a = model.mlm_logits(ids, np.array([0]), np.array([2]), t=4).data
    b = model.mlm_logits(padded, np.array([0]), np.array([2]), t=4).data
    assert np.allclose(a, b, atol=1e-10)


def test_bidirectional_context_reaches_masked_logits():
    model = EpitopeEncoder(TINY, seed=2)
    ids = encode_batch(["ACDEFG"])
    base = model.mlm_logits(ids, np.array([0]), np.array([2]), t=4).data
    changed = ids.copy()
    changed[0, 5] = 7  # perturb an unmasked position after the masked one
    after = model.mlm_logits(changed, np.array([0]), np.array([2]), t=4).data
    assert not np.allclose(base, after, atol=1e-10)


def test_mlm_loss_ignores_unmasked_targets():
    rng = np.random.default_rng(0)
    logits = Tensor(rng.normal(size=(2, 25)))
    targets = np.array([3, 4])
    a = float(mlm_loss(logits, targets).data)
    assert a > 0
    # loss over masked positions only: changing a target at an unmasked position
    # is changing nothing we pass in; uniform logits sanity instead
    uniform = Tensor(np.zeros((2, 25)))
    assert float(mlm_loss(uniform, targets).data) == pytest.approx(np.log(25))


def test_weight_tying_storage_identity():
    model = EpitopeEncoder(TINY, seed=3)
    ids = encode_batch(["ACDE"])
    before = model.mlm_logits(ids, np.array([0]), np.array([1]), t=0).data.copy()
    model.tok_emb.data[7] += 0.5  # one storage: moves input embedding AND logit column
    after = model.mlm_logits(ids, np.array([0]), np.array([1]), t=0).data
    assert before[0, 7] != after[0, 7]


def test_grad_flows_through_mlm_path(rng):
    model = EpitopeEncoder(TINY, seed=5)
    ids = encode_batch(["ACDEF", "ACD"])
    loss = mlm_loss(model.mlm_logits(ids, np.array([0, 1]), np.array([1, 2]), t=3),
                    np.array([2, 3]))
    model.params.zero_grads()
    backward(loss)
    assert model.tok_emb.grad is not None
    assert model.wc.grad is not None


def test_train_epoch_decreases_loss_and_is_deterministic():
    corpus = ["ACDEFGHIK", "LMNPQRSTV", "WYACDEFGH", "IKLMNPQRS"] * 4

    def run():
        model = EpitopeEncoder(TINY, seed=6)
        opt = AdamW(model.params, lr_peak=3e-3, total_steps=200)
        return train_epitope_encoder(corpus, model, opt, SCHED, seed=1, epochs=5, batch_size=8)

    losses_a = run()
    losses_b = run()
    assert losses_a == losses_b
    assert losses_a[-1] < losses_a[0]


def test_loss_strictly_decreases_over_five_epochs_most_seeds():
    # desk config on a 32-sequence toy corpus; progress is measured with the
    # deterministic fixed-t validation loss after each epoch (training loss at
    # freshly sampled t is not comparable epoch to epoch)
    from lsmtcr.data import load_corpus
    from pathlib import Path

    corpus = load_corpus(Path(__file__).resolve().parent.parent / "data" / "toy" / "epitopes.txt")[:32]
    desk = EncoderConfig(d_model=64, n_heads=4, d_head=16, n_layers=2, d_ff=256,
                         max_len=32, time_steps=20, dropout=0.1)
    wins = 0
    for seed in range(5):
        model = EpitopeEncoder(desk, seed=seed)
        opt = AdamW(model.params, lr_peak=2e-3, total_steps=400)
        vlosses = []
        for epoch in range(5):
            train_epitope_encoder(corpus, model, opt, SCHED, seed=seed * 1000 + epoch,
                                  epochs=1, batch_size=16)
            vlosses.append(validate(corpus, model, SCHED, seed=seed)[1])
        wins += all(a > b for a, b in zip(vlosses, vlosses[1:]))
    assert wins >= 4


def test_untrained_accuracy_within_binomial_bound():
    corpus = ["ACDEFGHIKL", "MNPQRSTVWY", "CDEFGHIKLM", "NPQRSTVWYA"] * 8
    n_masked = 2 * len(corpus)  # length 10 -> M = 2 candidates, all active at t_eval
    p = 1.0 / 25
    sigma = (p * (1 - p) / n_masked) ** 0.5
    for seed in range(5):
        model = EpitopeEncoder(TINY, seed=seed)
        acc, _ = validate(corpus, model, SCHED, seed=2)
        assert p - 3 * sigma <= acc <= p + 3 * sigma


def test_sinusoidal_time_embedding():
    cfg = EncoderConfig(d_model=16, n_heads=2, d_head=8, n_layers=1, d_ff=32,
                        max_len=16, time_steps=8, time_kind="sinusoidal", dropout=0.0)
    model = EpitopeEncoder(cfg, seed=0)
    assert "time_emb" not in model.params.names()  # fixed codes, not trainable
    assert model.time_emb.data.shape == (9, 16)
    out = model.encode(encode_batch(["ACDE"]), t=3)
    assert np.isfinite(out.data).all()


def test_embed_with_time_all_zero_tables():
    model = EpitopeEncoder(TINY, seed=0)
    for name in ("tok_emb", "pos_emb", "time_emb"):
        model.params[name].tensor.data[:] = 0.0
    out = model.embed_with_time(encode_batch(["ACDE"]), t=2)
    assert np.array_equal(out.data, np.zeros_like(out.data))


def test_zero_lr_keeps_parameters():
    corpus = ["ACDEFGHIK", "LMNPQRSTV"]
    model = EpitopeEncoder(TINY, seed=7)
    snapshot = {n: p.tensor.data.copy() for n, p in model.params.items()}
    opt = AdamW(model.params, lr_peak=0.0, total_steps=10)
    train_epitope_encoder(corpus, model, opt, SCHED, seed=1, epochs=1, batch_size=2)
    for n, p in model.params.items():
        assert np.array_equal(snapshot[n], p.tensor.data), n


def test_validate_deterministic_and_untrained_accuracy_near_chance():
    corpus = ["ACDEFGHIKL", "MNPQRSTVWY", "CDEFGHIKLM", "NPQRSTVWYA"] * 8
    model = EpitopeEncoder(TINY, seed=8)
    acc1, loss1 = validate(corpus, model, SCHED, seed=2)
    acc2, loss2 = validate(corpus, model, SCHED, seed=2)
    assert (acc1, loss1) == (acc2, loss2)
    # untrained: accuracy ~ 1/vocab; allow 3 sigma of the binomial around 1/25
    n_masked = 2 * len(corpus)  # len 10 -> M = 2 candidates, m(t_eval) = 2
    p = 1.0 / 25
    sigma = (p * (1 - p) / n_masked) ** 0.5
    assert acc1 <= p + 3 * sigma + 0.08  # loose upper guard; seeds fixed


def test_encode_epitope_clean_deterministic():
    model = EpitopeEncoder(TINY, seed=9)
    s1, v1 = model.encode_epitope("ACDEF")
    s2, v2 = model.encode_epitope("ACDEF")
    assert np.array_equal(s1, s2)
    assert s1.shape == (5, TINY.d_model)
    assert v1.all()
