"""Training objectives: conditional flow matching and the deterministic
regression baseline. Both return ``(loss, grads)`` with exact gradients."""

from __future__ import annotations

import numpy as np

from ..errors import TrainingError
from ..numeric import sigmoid
from .model import FlowModel, _forward, backward


def _mse(model, x_in, t, c, target):
    out, cache = _forward(model, x_in, t, c, train=True)
    diff = out - target
    B = x_in.shape[0]
    loss = float(np.sum(diff.astype(np.float64) ** 2) / B)
    if not np.isfinite(loss):
        finite = np.abs(out[np.isfinite(out)])
        raise TrainingError(
            f"non-finite loss {loss} ({out.size - finite.size} non-finite outputs, "
            f"max finite |output| = {finite.max(initial=0.0):.3g})"
        )
    grads = backward(model, cache, (2.0 / B) * diff)
    return loss, grads, cache


def draw_cfm_noise(model: FlowModel, batch: int, rng: np.random.Generator):
    """Noise, logit-normal times and the condition-keep mask for one batch."""
    x0 = rng.standard_normal((batch, model.arch.input_dim))
    t = sigmoid(rng.standard_normal(batch))
    keep = rng.random(batch) >= model.cond_dropout
    return x0, t, keep


def cfm_loss_grad_explicit(model: FlowModel, x1, c, x0, t, keep=None):
    """Flow-matching loss for fixed noise ``x0``, times ``t`` and keep mask.

    ``x_t = t*x0 + (1-t)*x1`` with target velocity ``x1 - x0``; dropped rows
    get the all-zero condition.
    """
    dt = model.dtype
    x1 = np.asarray(x1, dtype=dt)
    x0 = np.asarray(x0, dtype=dt)
    t = np.asarray(t, dtype=np.float64)
    tc = t.astype(dt)[:, None]
    xt = tc * x0 + (1 - tc) * x1
    target = x1 - x0
    if c is not None and keep is not None:
        c = np.asarray(c, dtype=dt) * np.asarray(keep, dtype=dt)[:, None]
    loss, grads, cache = _mse(model, xt, t, c, target)
    return loss, grads, cache


def cfm_loss_grad(model: FlowModel, x1, c, rng: np.random.Generator):
    """``x1`` must already be standardized with the model's stats."""
    x0, t, keep = draw_cfm_noise(model, len(x1), rng)
    loss, grads, _ = cfm_loss_grad_explicit(model, x1, c, x0, t, keep if c is not None else None)
    return loss, grads


def regression_loss_grad_cached(model: FlowModel, x, c):
    dt = model.dtype
    x = np.asarray(x, dtype=dt)
    zeros = np.zeros_like(x)
    return _mse(model, zeros, np.zeros(len(x)), c, x)


def regression_loss_grad(model: FlowModel, x, c):
    """Mean of ``|f(0, c) - x|^2`` with the time input fixed at zero."""
    loss, grads, _ = regression_loss_grad_cached(model, x, c)
    return loss, grads
