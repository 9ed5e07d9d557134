from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .losses import cross_entropy_loss
from .network import Network
from .optim import OptimizerState, adam_step, cosine_anneal_lr, sgd_momentum_step


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, lr: float, step: int) -> None:
        super().__init__(f"{message} (lr={lr:g}, step={step})")
        self.lr = lr
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "sgd-momentum"
    schedule: str = "cosine"
    lr_max: float = 0.0025
    lr_min: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 3e-4
    batch_size: int = 16
    epochs: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.optimizer not in ("sgd-momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if not self.lr_max >= self.lr_min > 0:
            raise ValueError("need lr_max >= lr_min > 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def lr_at(self, step: int, total_steps: int) -> float:
        if self.schedule == "constant":
            return self.lr_max
        return cosine_anneal_lr(step, total_steps, self.lr_max, self.lr_min)


def optimizer_step(cfg: TrainConfig, params, grads, state: OptimizerState, lr: float) -> None:
    if cfg.optimizer == "adam":
        adam_step(params, grads, state, lr)
    else:
        sgd_momentum_step(params, grads, state, lr, cfg.momentum, cfg.weight_decay)


def train_supervised(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> list[float]:
    """Minibatch training in place; returns the mean loss of every epoch.

    The learning-rate schedule is stepped per minibatch across all epochs.
    """
    n = len(y)
    if n == 0 or cfg.epochs == 0:
        return []
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    params = net.parameters()
    state = OptimizerState.for_params(cfg.optimizer, params)
    history = []
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            lr = cfg.lr_at(step, total)
            with np.errstate(over="ignore", invalid="ignore"):
                loss, g = cross_entropy_loss(net.forward(x[idx]), y[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged("non-finite training loss", lr, step)
            with np.errstate(over="ignore", invalid="ignore"):
                optimizer_step(cfg, params, net.backward(g), state, lr)
            losses.append(loss * len(idx))
            step += 1
        history.append(float(np.sum(losses) / n))
    net.clear_caches()
    return history


def accuracy(net: Network, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    pred = net.predict_logits(x).argmax(axis=1)
    return float((pred == y).mean())
