import numpy as np
import pytest

from lsmtcr.autodiff import backward


def numerical_grad(f, tensor, h_scale=1e-4):
    """Central finite differences of scalar f() w.r.t. tensor.data (64-bit)."""
    num = np.zeros_like(tensor.data, dtype=np.float64)
    it = np.nditer(tensor.data, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = tensor.data[idx]
        h = h_scale * max(1.0, abs(float(old)))
        tensor.data[idx] = old + h
        up = float(f().data)
        tensor.data[idx] = old - h
        down = float(f().data)
        tensor.data[idx] = old
        num[idx] = (up - down) / (2.0 * h)
    return num


def grad_check(f, tensors, rtol=1e-4):
    """Assert analytic gradients match central finite differences for each tensor."""
    for t in tensors:
        t.grad = None
    loss = f()
    backward(loss)
    for t in tensors:
        assert t.grad is not None, "missing gradient"
        num = numerical_grad(f, t)
        denom = np.maximum(1.0, np.abs(num))
        rel = np.abs(t.grad - num) / denom
        assert rel.max() < rtol, f"gradient mismatch: max rel err {rel.max():.3e}"
        t.grad = None


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
