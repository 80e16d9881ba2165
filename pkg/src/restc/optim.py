"""Adam with L2 weight decay, plus the two learning-rate schedules."""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingDivergenceError


@dataclass
class AdamState:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def _named(params):
    if hasattr(params, "named_parameters"):
        return list(params.named_parameters())
    if hasattr(params, "items"):
        return list(params.items())
    return [(str(i), p) for i, p in enumerate(params)]


def zero_grad(params):
    for _, p in _named(params):
        p.grad = None


def adam_step(params, state, weight_decay=0.0):
    """One bias-corrected Adam update over every parameter, then zero grads.

    L2 regularisation ``weight_decay * ||theta||^2`` enters as the gradient
    term ``2 * weight_decay * theta``.  Parameters whose ``grad`` is None are
    treated as having a zero gradient.
    """
    named = _named(params)
    for name, p in named:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise TrainingDivergenceError(f"non-finite gradient in parameter {name!r}", {"param": name})
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in named:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if weight_decay:
            g = g + 2.0 * weight_decay * p.data
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None


@dataclass(frozen=True)
class StepLR:
    step: int
    gamma: float = 0.1

    def __post_init__(self):
        if self.step < 1:
            raise ConfigError("StepLR step must be >= 1")


@dataclass(frozen=True)
class CosineAnnealing:
    t_max: int
    lr_min: float = 0.0

    def __post_init__(self):
        if self.t_max < 1:
            raise ConfigError("CosineAnnealing t_max must be >= 1")


def schedule_lr(base_lr, scheduler, epoch):
    """Learning rate for ``epoch`` (0-based) under ``scheduler`` (None = constant)."""
    if epoch < 0:
        raise ConfigError("epoch must be >= 0")
    if scheduler is None:
        return base_lr
    if isinstance(scheduler, StepLR):
        return base_lr * scheduler.gamma ** (epoch // scheduler.step)
    if isinstance(scheduler, CosineAnnealing):
        t = min(epoch, scheduler.t_max)
        return scheduler.lr_min + 0.5 * (base_lr - scheduler.lr_min) * (1.0 + math.cos(math.pi * t / scheduler.t_max))
    raise ConfigError(f"unknown scheduler {scheduler!r}")


def parse_scheduler(text):
    """``none``, ``step:STEP[:GAMMA]`` or ``cosine:T_MAX[:LR_MIN]``."""
    if text is None or text in ("", "none"):
        return None
    kind, *args = text.split(":")
    try:
        if kind == "step":
            return StepLR(int(args[0]), float(args[1]) if len(args) > 1 else 0.1)
        if kind == "cosine":
            return CosineAnnealing(int(args[0]), float(args[1]) if len(args) > 1 else 0.0)
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"bad scheduler setting {text!r}") from exc
    raise ConfigError(f"unknown scheduler {text!r}")
