"""AdamW with decoupled weight decay and a reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, Tensor


@dataclass
class AdamWState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)


class AdamW:
    """AdamW over a name -> Tensor parameter mapping.

    Weight decay multiplies the parameter by ``1 - lr * wd`` before the
    bias-corrected Adam update, independently of the moment estimates.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        if lr < 0:
            raise ContractError(f"learning rate must be non-negative, got {lr}")
        self.params = params
        self.state = AdamWState(lr, betas[0], betas[1], eps, weight_decay)
        for name, p in params.items():
            self.state.exp_avg[name] = np.zeros_like(p.data)
            self.state.exp_avg_sq[name] = np.zeros_like(p.data)

    @property
    def lr(self) -> float:
        return self.state.learning_rate

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.learning_rate = float(value)

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        s = self.state
        s.step += 1
        bc1 = 1.0 - s.beta1 ** s.step
        bc2 = 1.0 - s.beta2 ** s.step
        for name, p in self.params.items():
            g = p.grad if grads is None else grads[name]
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ContractError(f"gradient for {name} has shape {g.shape}, parameter {p.data.shape}")
            m = s.beta1 * s.exp_avg[name] + (1.0 - s.beta1) * g
            v = s.beta2 * s.exp_avg_sq[name] + (1.0 - s.beta2) * (g * g)
            s.exp_avg[name], s.exp_avg_sq[name] = m, v
            data = p.data * (1.0 - s.learning_rate * s.weight_decay)
            denom = np.sqrt(v) / math.sqrt(bc2) + s.epsilon
            p.data = data - (s.learning_rate / bc1) * m / denom

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


@dataclass
class PlateauSchedulerState:
    current_lr: float = 1e-3
    patience: int = 8
    decay_rate: float = 0.75
    warmup_epochs: int = 0
    threshold: float = 1e-4
    best_metric: float = math.inf
    epochs_since_improvement: int = 0
    epoch: int = 0


class PlateauScheduler:
    """Multiply the learning rate by ``decay_rate`` once the monitored metric
    (lower is better) has failed to improve for more than ``patience`` epochs.

    Improvement means ``metric < best * (1 - threshold)`` (relative mode).
    During the first ``warmup_epochs`` epochs the rate ramps linearly up to
    its initial value and the metric is ignored.
    """

    def __init__(self, initial_lr: float = 1e-3, patience: int = 8, decay_rate: float = 0.75,
                 warmup_epochs: int = 0, threshold: float = 1e-4):
        if not 0.0 < decay_rate < 1.0:
            raise ContractError(f"decay_rate must lie in (0, 1), got {decay_rate}")
        self.initial_lr = initial_lr
        self.state = PlateauSchedulerState(initial_lr, patience, decay_rate, warmup_epochs, threshold)

    def lr_for_epoch(self, epoch: int) -> float:
        """Rate to use during ``epoch`` (0-based) given the current state."""
        w = self.state.warmup_epochs
        if epoch < w:
            return self.initial_lr * (epoch + 1) / w
        return self.state.current_lr

    def step(self, val_metric: float) -> float:
        if not math.isfinite(val_metric):
            raise ContractError(f"plateau metric must be finite, got {val_metric}")
        s = self.state
        s.epoch += 1
        if s.epoch <= s.warmup_epochs:
            return self.lr_for_epoch(s.epoch)
        if val_metric < s.best_metric * (1.0 - s.threshold) or s.best_metric == math.inf:
            s.best_metric = val_metric
            s.epochs_since_improvement = 0
        else:
            s.epochs_since_improvement += 1
        if s.epochs_since_improvement > s.patience:
            s.current_lr *= s.decay_rate
            s.epochs_since_improvement = 0
        return s.current_lr
