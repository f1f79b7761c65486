"""Generation from a trained velocity field.

Time convention: training mixes ``x_t = t*noise + (1-t)*data``, so noise
sits at t=1 and data at t=0, and the regression target ``data - noise``
already points toward the data. Integration therefore starts from noise at
t=1, passes the *decreasing* current time to the model, and steps
``x <- x + dt * v`` with ``dt = 1/S``.

Any object with ``velocity(x, t, c)``, ``stats`` and ``arch`` attributes
works as a model here, which keeps stub fields easy to test.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError, SamplingError
from .numeric import rng_stream, standardize_apply, standardize_invert


@dataclass(frozen=True)
class SampleConfig:
    n_samples: int = 1
    euler_steps: int = 10
    guidance_scale: float = 1.0
    local_start_time: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ParameterError("n_samples must be >= 1")
        if self.euler_steps < 1:
            raise ParameterError("euler_steps must be >= 1")
        t0 = self.local_start_time
        if t0 is not None and not 0.0 <= t0 <= 1.0:
            raise ParameterError(f"local_start_time {t0} outside [0, 1]")


def _is_conditional(model) -> bool:
    arch = getattr(model, "arch", None)
    return bool(arch is not None and arch.conditional)


def guided_velocity(model, x, t, c, guidance: float) -> np.ndarray:
    """``v(x,t,0) + guidance * (v(x,t,c) - v(x,t,0))``.

    Guidance 1 evaluates the conditional branch alone and guidance 0 the
    unconditional branch alone, so both limits are exact.
    """
    if c is None or not _is_conditional(model) or guidance == 1.0:
        return model.velocity(x, t, c)
    if guidance == 0.0:
        return model.velocity(x, t, None)
    v_uncond = model.velocity(x, t, None)
    v_cond = model.velocity(x, t, c)
    return v_uncond + guidance * (v_cond - v_uncond)


def sample_noise(n: int, dim: int, seed: int, first_index: int = 0) -> np.ndarray:
    """Row ``i`` comes from its own stream ``(seed, "sampler", first_index + i)``."""
    return np.stack(
        [rng_stream(seed, "sampler", first_index + i).standard_normal(dim) for i in range(n)]
    )


def _warn_guidance(model, c, guidance):
    if c is not None and guidance != 1.0 and _is_conditional(model):
        if getattr(model, "cond_dropout", 0.0) <= 0.0:
            warnings.warn(
                "guidance != 1 on a model trained without condition dropout; "
                "the unconditional branch is untrained",
                stacklevel=3,
            )


def _integrate(model, x, c, t_start: float, steps: int, guidance: float, dtype):
    dt = t_start / steps
    for k in range(steps):
        t = t_start - k * dt
        v = guided_velocity(model, x.astype(dtype, copy=False), np.full(len(x), t), c, guidance)
        x = x + dt * v
        if not np.all(np.isfinite(x)):
            raise SamplingError(f"non-finite state after Euler step {k + 1} of {steps} (t={t:.4f})")
    return x


def _model_dtype(model):
    return getattr(model, "dtype", np.float64)


def _condition(model, c, n):
    if c is None:
        return None
    c = np.asarray(c, dtype=_model_dtype(model))
    if c.ndim == 1:
        c = np.broadcast_to(c, (n, c.shape[0]))
    arch = getattr(model, "arch", None)
    if arch is not None and c.shape[1] != arch.cond_dim:
        raise DimensionError(f"condition has dim {c.shape[1]}, model expects {arch.cond_dim}")
    return c


def euler_generate(model, c, cfg: SampleConfig, first_index: int = 0) -> np.ndarray:
    """Draw ``cfg.n_samples`` embeddings in the model's original space."""
    dim = model.stats.dim
    n = cfg.n_samples
    _warn_guidance(model, c, cfg.guidance_scale)
    c = _condition(model, c, n)
    x = sample_noise(n, dim, cfg.seed, first_index).astype(_model_dtype(model))
    x = _integrate(model, x, c, 1.0, cfg.euler_steps, cfg.guidance_scale, _model_dtype(model))
    return standardize_invert(x, model.stats)


def local_sample(model, x_query, c, cfg: SampleConfig, first_index: int = 0) -> np.ndarray:
    """Perturb ``x_query`` to time ``t0`` with fresh noise and integrate back.

    Uses ``ceil(S * t0)`` Euler steps, so step size stays near ``1/S``.
    """
    t0 = cfg.local_start_time
    if t0 is None:
        raise ParameterError("local_sample needs cfg.local_start_time")
    if not 0.0 <= t0 <= 1.0:
        raise ParameterError(f"local_start_time {t0} outside [0, 1]")
    x_query = np.asarray(x_query, dtype=np.float64).reshape(-1)
    n = cfg.n_samples
    if t0 == 0.0:
        return np.tile(x_query, (n, 1))
    _warn_guidance(model, c, cfg.guidance_scale)
    c = _condition(model, c, n)
    dtype = _model_dtype(model)
    z = standardize_apply(x_query[None, :], model.stats)
    noise = sample_noise(n, model.stats.dim, cfg.seed, first_index)
    x = (t0 * noise + (1.0 - t0) * z).astype(dtype)
    steps = max(1, math.ceil(cfg.euler_steps * t0))
    x = _integrate(model, x, c, t0, steps, cfg.guidance_scale, dtype)
    return standardize_invert(x, model.stats)


def regress(model, c) -> np.ndarray:
    """Deterministic prediction ``f(0, c)`` of a regression-objective model."""
    c = np.asarray(c, dtype=_model_dtype(model))
    if c.ndim == 1:
        c = c[None, :]
    zeros = np.zeros((len(c), model.stats.dim), dtype=_model_dtype(model))
    return standardize_invert(model.velocity(zeros, np.zeros(len(c)), c), model.stats)
