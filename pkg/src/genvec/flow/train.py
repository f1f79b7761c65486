from __future__ import annotations

import logging
import math

import numpy as np

from ..embeddings import as_array
from ..errors import DimensionError, ParameterError, TrainingError
from ..numeric import rng_stream, standardize_apply, standardize_fit
from .model import Architecture, FlowModel, init_model, update_batchnorm
from .objectives import cfm_loss_grad_explicit, draw_cfm_noise, regression_loss_grad_cached
from .optim import TrainConfig, adam_state, adamw_step, lr_at_step

log = logging.getLogger(__name__)


def train(
    targets,
    conditions=None,
    pairs=None,
    cfg: TrainConfig = TrainConfig(),
    arch: Architecture | None = None,
    dtype=np.float32,
    model: FlowModel | None = None,
) -> tuple[FlowModel, list[float]]:
    """Fit a flow (or regression) model on ``(condition, target)`` pairs.

    ``pairs`` is an ``(P, 2)`` integer array of ``(condition row, target
    row)``. Without conditions it may be omitted, in which case every
    target row is one training example. Returns the model and the mean
    training loss of each epoch.
    """
    X = np.asarray(as_array(targets), dtype=np.float64)
    C = None if conditions is None else np.asarray(as_array(conditions), dtype=np.float64)

    if pairs is None:
        if C is not None and len(C) != len(X):
            raise DimensionError("pairs are required when conditions and targets differ in length")
        pairs = np.stack([np.arange(len(X)), np.arange(len(X))], axis=1)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise ParameterError("no training pairs")
    if pairs[:, 1].min() < 0 or pairs[:, 1].max() >= len(X):
        raise DimensionError("target index out of range in pairs")
    if C is not None and (pairs[:, 0].min() < 0 or pairs[:, 0].max() >= len(C)):
        raise DimensionError("condition index out of range in pairs")

    if arch is None:
        arch = Architecture(input_dim=X.shape[1], cond_dim=0 if C is None else C.shape[1])
    if arch.input_dim != X.shape[1] or arch.cond_dim != (0 if C is None else C.shape[1]):
        raise DimensionError("architecture does not match the data dimensions")

    if model is None:
        model = init_model(arch, cfg.seed, dtype)
    model.stats = standardize_fit(X)
    model.objective = cfg.objective
    model.cond_dropout = cfg.cond_dropout if (C is not None and cfg.objective == "cfm") else 0.0
    Z = standardize_apply(X, model.stats).astype(model.dtype)
    Cd = None if C is None else C.astype(model.dtype)

    n = len(pairs)
    per_epoch = math.ceil(n / cfg.batch_size)
    total = cfg.total_steps or cfg.epochs * per_epoch
    epochs = math.ceil(total / per_epoch)
    shuffle_rng = rng_stream(cfg.seed, "shuffle")
    noise_rng = rng_stream(cfg.seed, "train-noise")
    state = adam_state(model.params)

    history: list[float] = []
    last_good = model.copy()
    step = 0
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            if step >= total:
                break
            idx = pairs[order[start : start + cfg.batch_size]]
            x1 = Z[idx[:, 1]]
            c = None if Cd is None else Cd[idx[:, 0]]
            try:
                if cfg.objective == "cfm":
                    x0, t, keep = draw_cfm_noise(model, len(x1), noise_rng)
                    loss, grads, cache = cfm_loss_grad_explicit(
                        model, x1, c, x0, t, keep if c is not None else None
                    )
                else:
                    loss, grads, cache = regression_loss_grad_cached(model, x1, c)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, step {step}: {exc}", last_good) from exc
            step += 1
            adamw_step(model.params, grads, state, step, cfg, lr=lr_at_step(step, cfg, total))
            update_batchnorm(model, cache)
            losses.append(loss)
        if not all(np.isfinite(p).all() for p in model.params.values()):
            raise TrainingError(f"non-finite parameters after epoch {epoch}", last_good)
        history.append(float(np.mean(losses)))
        last_good = model.copy()
        log.debug("epoch %d loss %.5f", epoch, history[-1])
    return model, history
