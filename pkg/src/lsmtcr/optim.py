"""Named parameters, AdamW with decoupled weight decay, linear warmup/decay.

Weight decay applies only to parameters flagged decay=True (weight matrices);
biases, norm gains/biases and embedding tables are excluded. Frozen parameters
(trainable=False) still receive gradients but are never updated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError


@dataclass
class Parameter:
    name: str
    tensor: Tensor
    trainable: bool = True
    decay: bool = False


class ParamSet:
    """Ordered, unique-named parameter collection; order fixes checkpoint layout."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data: np.ndarray, decay: bool = False) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = Parameter(name=name, tensor=t, decay=decay)
        return t

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def unique(self) -> list[Parameter]:
        """Parameters owning distinct storage (ties excluded)."""
        seen = set()
        out = []
        for p in self._params.values():
            if id(p.tensor) in seen:
                continue
            seen.add(id(p.tensor))
            out.append(p)
        return out

    def tensors(self) -> list[Tensor]:
        return [p.tensor for p in self.unique()]

    def zero_grads(self):
        for p in self.unique():
            p.tensor.grad = None

    def count(self) -> int:
        return sum(p.tensor.data.size for p in self.unique())

    def freeze(self, patterns: list[str]):
        """Mark parameters whose name matches any glob pattern as non-trainable."""
        import fnmatch

        for p in self._params.values():
            if any(fnmatch.fnmatch(p.name, pat) for pat in patterns):
                p.trainable = False


def cast_params(model, dtype):
    """Cast every parameter in model.params to dtype (float64 for strict probes)."""
    for p in model.params.unique():
        p.tensor.data = p.tensor.data.astype(dtype)
        p.tensor.grad = None
    return model


def lr_at(step: int, lr_peak: float, total_steps: int, warmup_fraction: float = 0.1) -> float:
    """Linear 0 -> lr_peak over the warmup segment, then linear decay to 0."""
    if total_steps <= 0:
        raise ConfigError("total_steps must be positive")
    warmup = warmup_fraction * total_steps
    if step <= 0:
        return 0.0
    if step > total_steps:
        return 0.0
    if step <= warmup:
        return lr_peak * step / warmup
    return lr_peak * (total_steps - step) / (total_steps - warmup)


@dataclass
class AdamW:
    """Decoupled-weight-decay Adam over a ParamSet, with the warmup schedule."""

    params: ParamSet
    lr_peak: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    total_steps: int = 1000
    warmup_fraction: float = 0.1
    step_count: int = field(default=0, init=False)
    _m: dict = field(default_factory=dict, init=False)
    _v: dict = field(default_factory=dict, init=False)

    def current_lr(self) -> float:
        return lr_at(self.step_count, self.lr_peak, self.total_steps, self.warmup_fraction)

    def step(self):
        """Apply one update from accumulated gradients; frozen params untouched."""
        self.step_count += 1
        lr = self.current_lr()
        b1, b2 = self.betas
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for p in self.params.unique():
            t = p.tensor
            if not p.trainable or t.grad is None:
                continue
            g = t.grad.astype(t.data.dtype, copy=False)
            if p.name not in self._m:
                self._m[p.name] = np.zeros_like(t.data)
                self._v[p.name] = np.zeros_like(t.data)
            m = self._m[p.name]
            v = self._v[p.name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if p.decay and self.weight_decay > 0.0:
                update = update + self.weight_decay * t.data
            t.data = (t.data - lr * update).astype(t.data.dtype, copy=False)
