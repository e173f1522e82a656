"""AdamW, the warmup/linear-decay schedule, and global-norm clipping."""
from __future__ import annotations

import fnmatch
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autograd import Tensor, global_grad_norm

DEFAULT_NO_DECAY = ("*ln*.gain", "*ln*.bias", "emb*.bias")


@dataclass(frozen=True)
class OptimConfig:
    peak_lr: float = 5e-4
    warmup_steps: int = 100
    total_steps: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float = 5.0
    no_decay: tuple[str, ...] = DEFAULT_NO_DECAY

    def __post_init__(self):
        if not 0 < self.warmup_steps <= self.total_steps:
            raise ValueError(
                f"need 0 < warmup_steps <= total_steps, got {self.warmup_steps}, {self.total_steps}"
            )
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")

    @property
    def betas(self) -> tuple[float, float]:
        return (self.beta1, self.beta2)


def lr_at(config: OptimConfig, step: int) -> float:
    """Linear ramp from 0 to ``peak_lr`` at ``warmup_steps``, then linear decay to 0."""
    if step < 0 or step > config.total_steps:
        raise ValueError(f"step {step} outside [0, {config.total_steps}]")
    if step <= config.warmup_steps:
        return config.peak_lr * step / config.warmup_steps
    remaining = config.total_steps - step
    return config.peak_lr * remaining / (config.total_steps - config.warmup_steps)


def clip_gradients(params: Iterable[Tensor], clip_norm: float) -> float:
    """Scale all grads so their joint norm is at most ``clip_norm``; return the pre-clip norm."""
    params = list(params)
    norm = global_grad_norm(params)
    if norm > clip_norm:
        scale = clip_norm / norm
        for p in params:
            p.grad = p.grad * scale
    return norm


@dataclass
class OptimState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def decays(name: str, patterns: Sequence[str]) -> bool:
    return not any(fnmatch.fnmatchcase(name, pat) for pat in patterns)


def adamw_step(
    params: Sequence[Tensor], state: OptimState, lr: float, config: OptimConfig
) -> None:
    """Bias-corrected Adam update followed by decoupled decay ``p -= lr * wd * p``."""
    for p in params:
        if p.grad is None:
            raise ValueError(f"parameter {p.name} has no gradient")
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p in params:
        key = p.name
        if key is None:
            raise ValueError("optimizer parameters must be named")
        g = p.grad
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + config.eps)
        if config.weight_decay and decays(key, config.no_decay):
            p.data = p.data - lr * config.weight_decay * p.data


class AdamW:
    """One parameter group with its own moments."""

    def __init__(self, params: Sequence[Tensor], config: OptimConfig, state: OptimState | None = None):
        self.params = list(params)
        self.config = config
        self.state = state if state is not None else OptimState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def fill_missing_grads(self) -> None:
        for p in self.params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)

    def clip(self) -> float:
        return clip_gradients(self.params, self.config.clip_norm)

    def step(self, lr: float) -> None:
        adamw_step(self.params, self.state, lr, self.config)


def warmup_for(total_steps: int, fraction: float = 0.1) -> int:
    return max(1, min(total_steps, math.ceil(total_steps * fraction)))
