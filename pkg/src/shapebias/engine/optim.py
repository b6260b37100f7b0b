"""Optimizers and learning-rate schedules.

Weight decay enters as an additive ``lam * w`` gradient term (classic L2)
for both SGD-momentum and Adam; Adam constants default to beta1=0.9,
beta2=0.999, eps=1e-8.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NumericalFault, ShapeMismatch, Tensor


@dataclass
class OptimizerState:
    kind: str  # sgd_momentum | adam
    learning_rate: float
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    buffers: dict[str, dict[str, Tensor]] = field(default_factory=dict)
    step_count: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd_momentum", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.beta1 <= 0 or self.beta2 <= 0 or self.eps <= 0:
            raise ValueError("adam betas and epsilon must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be nonnegative")


def optimizer_step(
    params: dict[str, Tensor],
    grads: dict[str, Tensor],
    state: OptimizerState,
    rate: float | None = None,
) -> None:
    """Apply one update in place; ``rate`` overrides the state's base rate."""
    lr = state.learning_rate if rate is None else rate
    if lr <= 0:
        raise ValueError(f"rate must be positive, got {lr}")
    state.step_count += 1
    t = state.step_count
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} != param shape {w.shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericalFault(f"non-finite gradient for parameter {name!r}")
        if state.weight_decay:
            g = g + state.weight_decay * w
        buf = state.buffers.setdefault(name, {})
        if state.kind == "sgd_momentum":
            v = buf.setdefault("velocity", np.zeros_like(w))
            v *= state.momentum
            v += g
            w -= lr * v
        else:  # adam
            m = buf.setdefault("m", np.zeros_like(w))
            v = buf.setdefault("v", np.zeros_like(w))
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            m_hat = m / (1.0 - state.beta1**t)
            v_hat = v / (1.0 - state.beta2**t)
            w -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass(frozen=True)
class LrSchedule:
    kind: str = "constant"  # constant | step_decay | cosine_decay
    base_rate: float = 1e-3
    decay_epochs: tuple[int, ...] = ()
    decay_factor: float = 0.1
    total_steps: int = 1
    steps_per_epoch: int = 1

    def __post_init__(self):
        if self.kind not in ("constant", "step_decay", "cosine_decay"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.base_rate <= 0:
            raise ValueError("base rate must be positive")
        if self.kind == "cosine_decay" and self.total_steps < 1:
            raise ValueError("cosine_decay needs total_steps >= 1")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")


def schedule_lr(schedule: LrSchedule, step: int) -> float:
    """Rate at a (0-based) step; steps past a cosine's total are clamped."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if schedule.kind == "constant":
        return schedule.base_rate
    if schedule.kind == "step_decay":
        epoch = step // schedule.steps_per_epoch
        drops = sum(1 for e in schedule.decay_epochs if epoch >= e)
        return schedule.base_rate * schedule.decay_factor**drops
    t = min(step, schedule.total_steps)
    rate = schedule.base_rate * 0.5 * (1.0 + np.cos(np.pi * t / schedule.total_steps))
    # keep the emitted rate strictly positive at the cosine endpoint
    return float(max(rate, schedule.base_rate * 1e-6))
