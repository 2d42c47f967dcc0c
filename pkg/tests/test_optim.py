import numpy as np
import pytest

from lsmtcr.autodiff import backward, mean_, sum_
from lsmtcr.errors import ConfigError
from lsmtcr.ops import linear
from lsmtcr.optim import AdamW, ParamSet, lr_at


def test_lr_schedule_endpoints():
    assert lr_at(100, 1e-3, 1000) == pytest.approx(1e-3)
    assert lr_at(1000, 1e-3, 1000) == 0.0
    assert lr_at(550, 1e-3, 1000) == pytest.approx(0.5e-3)
    assert lr_at(0, 1e-3, 1000) == 0.0
    assert lr_at(1001, 1e-3, 1000) == 0.0
    assert lr_at(50, 1e-3, 1000) == pytest.approx(0.5e-3)


def test_lr_schedule_rejects_bad_total():
    with pytest.raises(ConfigError):
        lr_at(1, 1e-3, 0)


def _toy_problem(seed=0):
    rng = np.random.default_rng(seed)
    ps = ParamSet()
    w = ps.add("w", rng.normal(size=(3, 3)).astype(np.float32), decay=True)
    b = ps.add("b", np.zeros(3, dtype=np.float32))
    x = rng.normal(size=(5, 3)).astype(np.float32)
    return ps, w, b, x


def test_adamw_reduces_loss():
    ps, w, b, x = _toy_problem()
    opt = AdamW(ps, lr_peak=0.05, total_steps=100, weight_decay=0.0)
    first = None
    for _ in range(60):
        loss = mean_(sum_(linear(x, w, b) * linear(x, w, b), axis=-1))
        ps.zero_grads()
        backward(loss)
        opt.step()
        if first is None:
            first = float(loss.data)
    assert float(loss.data) < first * 0.5


def test_frozen_parameter_keeps_grad_but_not_updated():
    ps, w, b, x = _toy_problem()
    ps["w"].trainable = False
    before = w.data.copy()
    opt = AdamW(ps, lr_peak=0.05, total_steps=100)
    loss = sum_(linear(x, w, b))
    ps.zero_grads()
    backward(loss)
    opt.step()
    assert w.grad is not None
    assert np.array_equal(w.data, before)
    assert not np.array_equal(b.data, np.zeros(3, dtype=np.float32))


def test_zero_lr_leaves_parameters_unchanged():
    ps, w, b, x = _toy_problem()
    before_w, before_b = w.data.copy(), b.data.copy()
    opt = AdamW(ps, lr_peak=0.0, total_steps=10)
    loss = sum_(linear(x, w, b))
    ps.zero_grads()
    backward(loss)
    opt.step()
    assert np.array_equal(w.data, before_w)
    assert np.array_equal(b.data, before_b)


def test_weight_decay_only_on_decay_params():
    ps = ParamSet()
    w = ps.add("w", np.full((2, 2), 2.0, dtype=np.float32), decay=True)
    b = ps.add("b", np.full(2, 2.0, dtype=np.float32))
    # zero gradient: only the decoupled decay term moves w
    w.grad = np.zeros_like(w.data)
    b.grad = np.zeros_like(b.data)
    opt = AdamW(ps, lr_peak=0.1, total_steps=10, warmup_fraction=0.1, weight_decay=0.5)
    opt.step()
    assert (w.data < 2.0).all()
    assert np.array_equal(b.data, np.full(2, 2.0, dtype=np.float32))


def test_update_determinism():
    def run():
        ps, w, b, x = _toy_problem(7)
        opt = AdamW(ps, lr_peak=0.01, total_steps=50)
        for _ in range(10):
            loss = sum_(linear(x, w, b))
            ps.zero_grads()
            backward(loss)
            opt.step()
        return w.data.copy(), b.data.copy()

    a, b_ = run(), run()
    assert np.array_equal(a[0], b_[0])
    assert np.array_equal(a[1], b_[1])


def test_duplicate_name_rejected():
    ps = ParamSet()
    ps.add("w", np.zeros(1, dtype=np.float32))
    with pytest.raises(ConfigError):
        ps.add("w", np.zeros(1, dtype=np.float32))
