"""Adam and the cosine-annealing learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import FrozenParameterError, Tensor


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """lr0 * (1 + cos(pi * step / total_steps)) / 2, floored at 0."""
    if total_steps <= 0:
        return lr0
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return max(0.0, lr0 * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0)


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, in place on the ``params`` arrays."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        if m.shape != p.shape or v.shape != p.shape:
            raise ValueError(f"Adam moment shape {m.shape} does not match parameter {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
    return state


@dataclass
class Adam:
    """Adam over a list of trainable tensors. Frozen tensors are refused."""

    params: list
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.params = list(self.params)
        for p in self.params:
            if p.frozen:
                raise FrozenParameterError(f"optimizer refuses frozen parameter {p.name}")
        self.state = AdamState(m=[np.zeros_like(p.data, dtype=np.float64) for p in self.params],
                               v=[np.zeros_like(p.data, dtype=np.float64) for p in self.params])

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None):
        for p in self.params:
            if p.frozen:
                raise FrozenParameterError(f"parameter {p.name} was frozen after optimizer creation")
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state,
                  self.lr if lr is None else lr, self.beta1, self.beta2, self.eps)


def trainable(params) -> list[Tensor]:
    return [p for p in params if p.requires_grad and not p.frozen]
