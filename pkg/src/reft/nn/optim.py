"""Optimizer steps and learning-rate schedules.

Steps update ``params`` in place (and return them) so that arrays held by
network layers stay live.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class OptimizerState:
    kind: str
    first: list[np.ndarray] = field(default_factory=list)
    second: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    @classmethod
    def for_params(cls, kind: str, params: Sequence[np.ndarray]) -> "OptimizerState":
        if kind not in ("sgd-momentum", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        first = [np.zeros_like(p) for p in params]
        second = [np.zeros_like(p) for p in params] if kind == "adam" else []
        return cls(kind, first, second)


def _check(params, grads, state) -> None:
    if len(params) != len(grads) or len(params) != len(state.first):
        raise ValueError("params, grads and optimizer state differ in length")
    for p, g, m in zip(params, grads, state.first):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, buffer {m.shape}")


def sgd_momentum_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: OptimizerState,
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 0.0,
) -> Sequence[np.ndarray]:
    """v <- momentum*v + grad + weight_decay*param;  param <- param - lr*v."""
    _check(params, grads, state)
    for p, g, v in zip(params, grads, state.first):
        d = g + weight_decay * p if weight_decay else g
        v *= momentum
        v += d
        p -= lr * v
    state.step += 1
    return params


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: OptimizerState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> Sequence[np.ndarray]:
    _check(params, grads, state)
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.first, state.second):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    return params


def cosine_anneal_lr(step: int, total_steps: int, lr_max: float, lr_min: float) -> float:
    if step >= total_steps:
        return lr_min
    step = max(step, 0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))
