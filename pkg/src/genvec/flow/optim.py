"""AdamW with a linear-warmup / cosine-decay learning rate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, ParameterError

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    warmup_steps: int = 500
    batch_size: int = 256
    epochs: int = 20
    cond_dropout: float = 0.10
    objective: str = "cfm"
    seed: int = 0
    total_steps: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.cond_dropout <= 1.0:
            raise ParameterError("cond_dropout must be in [0, 1]")
        if self.lr < 0 or self.weight_decay < 0:
            raise ParameterError("lr and weight_decay must be >= 0")
        if self.warmup_steps < 0 or self.batch_size < 1 or self.epochs < 1:
            raise ParameterError("warmup_steps >= 0, batch_size >= 1, epochs >= 1 required")
        if self.objective not in ("cfm", "regression"):
            raise ParameterError(f"unknown objective {self.objective!r}")


def lr_at_step(step: int, cfg: TrainConfig, total_steps: int | None = None) -> float:
    total = total_steps if total_steps is not None else cfg.total_steps
    if total is None:
        raise ParameterError("lr_at_step needs the total number of steps")
    warm = cfg.warmup_steps
    if step < warm:
        return cfg.lr * step / warm
    if total <= warm:
        return cfg.lr
    progress = min((step - warm) / (total - warm), 1.0)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def adam_state(params: dict[str, np.ndarray]) -> dict[str, dict[str, np.ndarray]]:
    return {
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def adamw_step(params, grads, state, step: int, cfg: TrainConfig, lr: float | None = None):
    """One in-place AdamW update; returns ``(params, state)``.

    Weight decay is decoupled: ``p *= 1 - lr*wd`` before the Adam step.
    ``lr`` defaults to ``lr_at_step(step, cfg)``.
    """
    if step < 1:
        raise ParameterError("adamw_step expects step >= 1")
    if lr is None:
        lr = lr_at_step(step, cfg)
    b1c = 1.0 - BETA1**step
    b2c = 1.0 - BETA2**step
    for k, p in params.items():
        g = grads[k]
        m, v = state["m"][k], state["v"][k]
        if g.shape != p.shape or m.shape != p.shape:
            raise DimensionError(f"shape mismatch for {k}: {p.shape} vs {g.shape}")
        m *= BETA1
        m += (1 - BETA1) * g
        v *= BETA2
        v += (1 - BETA2) * g * g
        if cfg.weight_decay:
            p *= 1.0 - lr * cfg.weight_decay
        p -= lr * (m / b1c) / (np.sqrt(v / b2c) + ADAM_EPS)
    return params, state
