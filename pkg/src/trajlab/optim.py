"""Adam with a linear warm-up followed by inverse-square-root decay."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, TrainingError


@dataclass
class WarmupInverseSqrt:
    """Learning rate ramps linearly to base_rate over warmup_steps, then
    decays as base_rate * sqrt(warmup_steps / step)."""

    base_rate: float = 1e-4
    warmup_steps: int = 1

    def __post_init__(self):
        if self.base_rate <= 0:
            raise ConfigError(f"base rate must be positive, got {self.base_rate}")
        if self.warmup_steps < 1:
            raise ConfigError(f"warmup_steps must be >= 1, got {self.warmup_steps}")

    def rate(self, step: int) -> float:
        # step counts from 1
        if step <= self.warmup_steps:
            return self.base_rate * step / self.warmup_steps
        return self.base_rate * math.sqrt(self.warmup_steps / step)


class Adam:
    """Bias-corrected Adam over a named parameter dict."""

    def __init__(self, params: dict, schedule: WarmupInverseSqrt,
                 beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9):
        self.params = dict(params)
        self.schedule = schedule
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            else:
                p.grad[...] = 0.0

    def step(self) -> float:
        """Apply one update; returns the learning rate used."""
        self.step_count += 1
        lr = self.schedule.rate(self.step_count)
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise TrainingError(f"non-finite gradient in parameter '{name}' at step {self.step_count}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** self.step_count)
            v_hat = v / (1.0 - b2 ** self.step_count)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return lr


def check_params(params: dict) -> None:
    for name, p in params.items():
        if not isinstance(p, Tensor) or not p.requires_grad:
            raise ConfigError(f"optimizer parameter '{name}' must be a requires_grad tensor")
