"""SGD with momentum and the two learning-rate schedules used for training."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class SGD:
    """Momentum SGD with coupled weight decay.

    Update per parameter ``w`` with gradient ``g``::

        v <- momentum * v + (g + weight_decay * w)
        w <- w - lr * v

    Velocity buffers start at zero and are keyed by position in ``params``.
    """

    def __init__(self, params, lr, momentum=0.9, weight_decay=0.0):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
        if weight_decay < 0:
            raise ValueError(f"weight decay must be non-negative, got {weight_decay}")
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise RuntimeError(f"parameter {p.name or i} has no gradient; call backward first")
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v += p.grad + self.weight_decay * p.data
            p.data -= self.lr * v

    def state_arrays(self):
        return {f"velocity/{i}": v for i, v in enumerate(self.velocity)}

    def load_state_arrays(self, arrays):
        for i, v in enumerate(self.velocity):
            src = arrays[f"velocity/{i}"]
            if src.shape != v.shape:
                raise ValueError(f"velocity/{i}: shape {src.shape} does not match parameter {v.shape}")
            v[...] = src


@dataclass
class LrSchedule:
    kind: str = "step"
    base_lr: float = 0.1
    total_epochs: int = 200
    warmup_epochs: int = 0
    milestones: list = field(default_factory=list)
    decay: float = 0.1

    def __post_init__(self):
        if self.kind not in ("step", "cosine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected 'step' or 'cosine'")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.warmup_epochs < 0 or self.total_epochs < 0:
            raise ValueError("epoch counts must be non-negative")

    def lr_at(self, epoch):
        return lr_at(self, epoch)


def lr_at(schedule, epoch):
    """Learning rate for a (0-indexed) epoch.

    Linear warm-up reaches ``base_lr`` at the end of epoch ``warmup_epochs - 1``.
    """
    if not 0 <= epoch < schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    base = schedule.base_lr
    if epoch < schedule.warmup_epochs:
        return base * (epoch + 1) / schedule.warmup_epochs
    if schedule.kind == "step":
        passed = sum(1 for m in schedule.milestones if epoch >= m)
        return base * schedule.decay**passed
    # half cosine from base toward 0; stays strictly positive inside the range
    span = schedule.total_epochs - schedule.warmup_epochs
    t = (epoch - schedule.warmup_epochs) / span
    return 0.5 * base * (1.0 + math.cos(math.pi * t))
