"""Conditional velocity network built from HyperLinear residual blocks.

Data path::

    x --in--> h --[block]*L--> out --> v
    block(h) = h + HL2(gelu(HL1(LayerNorm(h), e), e), e)

Conditioning path (``e`` modulates every HyperLinear)::

    t --sinusoid--> time MLP ----------------+
    c --batchnorm--> linear ---- concat -----+--> fuse --> e

A HyperLinear computes ``s(e) * (W x) + alpha * V(e) U(e)^T x + b(e)``,
where U, V, b and s each come from their own one-hidden-layer GELU
generator whose hidden width equals the width of ``e``.

Parameters live in a plain ``dict[str, ndarray]``; gradients come back in
a dict with the same keys. Everything is numpy, forward and backward.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr

from ..errors import DimensionError, ParameterError
from ..numeric import StandardizeStats, rng_stream

LN_EPS = 1e-5
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
ALPHA_INIT = 1e-2
TIME_BASE = 10000.0
GENERATORS = ("U", "V", "b", "s")
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden_dim: int = 64
    time_dim: int = 32
    cond_dim: int = 0
    layers: int = 1
    rank: int = 8

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "time_dim", "layers", "rank"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if self.cond_dim < 0:
            raise ParameterError("cond_dim must be >= 0")
        if self.rank >= self.hidden_dim:
            raise ParameterError(
                f"rank {self.rank} must be < min(d_in, d_out) = {self.hidden_dim}"
            )

    @property
    def conditional(self) -> bool:
        return self.cond_dim > 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FlowModel:
    arch: Architecture
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    stats: StandardizeStats | None = None
    cond_dropout: float = 0.0
    objective: str = "cfm"

    @property
    def dtype(self):
        return self.params["out.w"].dtype

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "FlowModel":
        return FlowModel(
            self.arch,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.stats,
            self.cond_dropout,
            self.objective,
        )

    def velocity(self, x, t, c=None) -> np.ndarray:
        """Inference-mode velocity in standardized space."""
        return forward(self, x, t, c)


# ---------------------------------------------------------------------------
# initialization


def _hyperlinear_shapes(prefix, d_in, d_out, width, rank):
    outs = {"U": d_in * rank, "V": d_out * rank, "b": d_out, "s": d_out}
    shapes = {f"{prefix}.W": (d_out, d_in), f"{prefix}.alpha": (1,)}
    for g in GENERATORS:
        shapes[f"{prefix}.gen.{g}.w1"] = (width, width)
        shapes[f"{prefix}.gen.{g}.b1"] = (width,)
        shapes[f"{prefix}.gen.{g}.w2"] = (outs[g], width)
        shapes[f"{prefix}.gen.{g}.b2"] = (outs[g],)
    return shapes


def param_shapes(arch: Architecture) -> dict[str, tuple]:
    D, H, T, C = arch.input_dim, arch.hidden_dim, arch.time_dim, arch.cond_dim
    shapes = {
        "in.w": (H, D), "in.b": (H,),
        "time.0.w": (T, T), "time.0.b": (T,),
        "time.1.w": (T, T), "time.1.b": (T,),
    }
    if C:
        shapes.update({"cond.bn.g": (C,), "cond.bn.b": (C,), "cond.w": (T, C), "cond.b": (T,)})
    shapes.update({"fuse.w": (T, 2 * T if C else T), "fuse.b": (T,)})
    for layer in range(arch.layers):
        p = f"blocks.{layer}"
        shapes[f"{p}.ln.g"] = (H,)
        shapes[f"{p}.ln.b"] = (H,)
        shapes.update(_hyperlinear_shapes(f"{p}.hl1", H, H, T, arch.rank))
        shapes.update(_hyperlinear_shapes(f"{p}.hl2", H, H, T, arch.rank))
    shapes.update({"out.w": (D, H), "out.b": (D,)})
    return shapes


def init_model(arch: Architecture, seed: int = 0, dtype=np.float32) -> FlowModel:
    """Fan-in scaled uniform weights, zero biases, and generators set up so
    every HyperLinear starts as the plain projection ``W x``.

    The s-generator outputs exactly one and the V- and b-generators exactly
    zero for any input. The U-generator's output layer is random: with V at
    zero the low-rank term still vanishes, but V receives a non-zero
    gradient from the first step (zeroing both factors would pin them at
    zero forever).
    """
    rng = rng_stream(seed, "init")
    params = {}
    for name, shape in param_shapes(arch).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("b", "b1") or name.endswith(("ln.b", "bn.b")):
            value = np.zeros(shape)
        elif name.endswith(("ln.g", "bn.g")):
            value = np.ones(shape)
        elif leaf == "alpha":
            value = np.full(shape, ALPHA_INIT)
        elif leaf == "b2":
            value = np.ones(shape) if ".gen.s." in name else np.zeros(shape)
        elif leaf == "w2" and ".gen.U." not in name:
            value = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(shape[1])
            value = rng.uniform(-bound, bound, size=shape)
        params[name] = value.astype(dtype)
    buffers = {}
    if arch.conditional:
        buffers = {
            "cond.bn.mean": np.zeros(arch.cond_dim, dtype=dtype),
            "cond.bn.var": np.ones(arch.cond_dim, dtype=dtype),
        }
    return FlowModel(arch, params, buffers)


# ---------------------------------------------------------------------------
# primitives


def gelu(a):
    return a * ndtr(a)


def gelu_grad(a):
    return ndtr(a) + a * _INV_SQRT_2PI * np.exp(-0.5 * a * a)


def time_encoding(t, dim: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal encoding with frequencies ``base**(-i/half)``."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    out = np.zeros((t.shape[0], dim))
    if half:
        freqs = np.exp(-math.log(TIME_BASE) * np.arange(half) / half)
        args = t[:, None] * freqs[None, :]
        out[:, :half] = np.sin(args)
        out[:, half : 2 * half] = np.cos(args)
    return out.astype(dtype)


def _linear(P, name, x):
    return x @ P[name + ".w"].T + P[name + ".b"]


def _linear_back(P, G, name, x, gy):
    G[name + ".w"] = G.get(name + ".w", 0) + gy.T @ x
    G[name + ".b"] = G.get(name + ".b", 0) + gy.sum(axis=0)
    return gy @ P[name + ".w"]


def _generator(P, name, e):
    a = e @ P[name + ".w1"].T + P[name + ".b1"]
    g = gelu(a)
    return g @ P[name + ".w2"].T + P[name + ".b2"], (a, g)


def _generator_back(P, G, name, e, cache, go):
    a, g = cache
    G[name + ".w2"] = go.T @ g
    G[name + ".b2"] = go.sum(axis=0)
    ga = (go @ P[name + ".w2"]) * gelu_grad(a)
    G[name + ".w1"] = ga.T @ e
    G[name + ".b1"] = ga.sum(axis=0)
    return ga @ P[name + ".w1"]


def _hyperlinear(P, prefix, x, e, rank, dynamic=True):
    W = P[prefix + ".W"]
    Wx = x @ W.T
    if not dynamic:
        return Wx, None
    B, d_in = x.shape
    d_out = W.shape[0]
    gens = {g: _generator(P, f"{prefix}.gen.{g}", e) for g in GENERATORS}
    U = gens["U"][0].reshape(B, d_in, rank)
    V = gens["V"][0].reshape(B, d_out, rank)
    s, b = gens["s"][0], gens["b"][0]
    alpha = P[prefix + ".alpha"][0]
    z = np.einsum("bir,bi->br", U, x)
    lowrank = np.einsum("bor,br->bo", V, z)
    y = s * Wx + alpha * lowrank + b
    return y, (x, Wx, U, V, s, z, lowrank, gens)


def _hyperlinear_back(P, G, prefix, e, cache, gy):
    x, Wx, U, V, s, z, lowrank, gens = cache
    B = x.shape[0]
    W = P[prefix + ".W"]
    alpha = P[prefix + ".alpha"][0]
    gWx = gy * s
    G[prefix + ".W"] = gWx.T @ x
    gx = gWx @ W
    G[prefix + ".alpha"] = np.array([np.sum(gy * lowrank)], dtype=W.dtype)
    glr = alpha * gy
    gV = np.einsum("bo,br->bor", glr, z)
    gz = np.einsum("bor,bo->br", V, glr)
    gU = np.einsum("bi,br->bir", x, gz)
    gx = gx + np.einsum("bir,br->bi", U, gz)
    outs = {"U": gU.reshape(B, -1), "V": gV.reshape(B, -1), "b": gy, "s": gy * Wx}
    ge = 0
    for g in GENERATORS:
        name = f"{prefix}.gen.{g}"
        ge = ge + _generator_back(P, G, name, e, gens[g][1], outs[g])
    return gx, ge


def _layernorm(P, prefix, x):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * P[prefix + ".g"] + P[prefix + ".b"], (xhat, inv)


def _layernorm_back(P, G, prefix, cache, gy):
    xhat, inv = cache
    G[prefix + ".g"] = (gy * xhat).sum(axis=0)
    G[prefix + ".b"] = gy.sum(axis=0)
    gxhat = gy * P[prefix + ".g"]
    return inv * (
        gxhat - gxhat.mean(axis=1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=1, keepdims=True)
    )


# ---------------------------------------------------------------------------
# network


def _check_inputs(model, x, t, c):
    arch = model.arch
    x = np.asarray(x, dtype=model.dtype)
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise DimensionError(f"x must have shape (B, {arch.input_dim}), got {x.shape}")
    B = x.shape[0]
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        t = np.full(B, float(t))
    t = t.reshape(-1)
    if t.shape[0] != B:
        raise DimensionError(f"{t.shape[0]} times for a batch of {B}")
    if arch.conditional:
        if c is None:
            c = np.zeros((B, arch.cond_dim), dtype=model.dtype)
        c = np.asarray(c, dtype=model.dtype)
        if c.ndim == 1:
            c = np.broadcast_to(c, (B, c.shape[0]))
        if c.shape != (B, arch.cond_dim):
            raise DimensionError(f"c must have shape ({B}, {arch.cond_dim}), got {c.shape}")
    elif c is not None:
        raise DimensionError("model is unconditional but a condition was given")
    for name, arr in (("x", x), ("t", t), ("c", c)):
        if arr is not None and not np.all(np.isfinite(arr)):
            raise DimensionError(f"non-finite values in {name}")
    return x, t, c


def _forward(model: FlowModel, x, t, c, train: bool, dynamic: bool = True):
    P, arch = model.params, model.arch
    x, t, c = _check_inputs(model, x, t, c)
    dt = model.dtype
    cache = {}

    temb = time_encoding(t, arch.time_dim, dt)
    a0 = _linear(P, "time.0", temb)
    g0 = gelu(a0)
    tvec = _linear(P, "time.1", g0)
    cache["time"] = (temb, a0, g0)

    if arch.conditional:
        if train:
            mean = c.mean(axis=0)
            var = c.var(axis=0)
        else:
            mean, var = model.buffers["cond.bn.mean"], model.buffers["cond.bn.var"]
        inv = 1.0 / np.sqrt(var + BN_EPS)
        chat = (c - mean) * inv
        cbn = chat * P["cond.bn.g"] + P["cond.bn.b"]
        cvec = _linear(P, "cond", cbn)
        fused_in = np.concatenate([tvec, cvec], axis=1)
        cache["cond"] = (chat, inv, cbn, train, mean, var)
    else:
        fused_in = tvec
    e = _linear(P, "fuse", fused_in)
    cache["fuse_in"] = fused_in

    h = _linear(P, "in", x)
    blocks = []
    for layer in range(arch.layers):
        p = f"blocks.{layer}"
        ln, ln_cache = _layernorm(P, p + ".ln", h)
        y1, hl1 = _hyperlinear(P, p + ".hl1", ln, e, arch.rank, dynamic)
        a = gelu(y1)
        y2, hl2 = _hyperlinear(P, p + ".hl2", a, e, arch.rank, dynamic)
        blocks.append((ln, ln_cache, y1, hl1, a, hl2))
        h = h + y2
    cache.update(x=x, e=e, blocks=blocks, h=h)
    return _linear(P, "out", h), cache


def forward(model: FlowModel, x, t, c=None, *, train: bool = False) -> np.ndarray:
    """Velocity for points ``x`` at times ``t`` under condition ``c``.

    ``c=None`` on a conditional model means the all-zero condition, which
    is the unconditional branch used by classifier-free guidance. With
    ``train=True`` the condition batch-norm uses batch statistics.
    """
    return _forward(model, x, t, c, train)[0]


def forward_static(model: FlowModel, x, t, c=None) -> np.ndarray:
    """Forward pass with every generator switched off (each HyperLinear is
    just ``W x``). Used to check the initialization contract."""
    return _forward(model, x, t, c, train=False, dynamic=False)[0]


def backward(model: FlowModel, cache, gout) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of ``sum(gout * output)`` w.r.t. every parameter."""
    P, arch = model.params, model.arch
    G: dict[str, np.ndarray] = {}
    e = cache["e"]
    gh = _linear_back(P, G, "out", cache["h"], gout)
    ge = np.zeros_like(e)
    for layer in reversed(range(arch.layers)):
        p = f"blocks.{layer}"
        ln, ln_cache, y1, hl1, a, hl2 = cache["blocks"][layer]
        ga, ge2 = _hyperlinear_back(P, G, p + ".hl2", e, hl2, gh)
        gy1 = ga * gelu_grad(y1)
        gln, ge1 = _hyperlinear_back(P, G, p + ".hl1", e, hl1, gy1)
        gh = gh + _layernorm_back(P, G, p + ".ln", ln_cache, gln)
        ge = ge + ge1 + ge2
    _linear_back(P, G, "in", cache["x"], gh)

    gfused = _linear_back(P, G, "fuse", cache["fuse_in"], ge)
    T = arch.time_dim
    gt = gfused[:, :T]
    if arch.conditional:
        chat, inv, cbn, train, _, _ = cache["cond"]
        gcbn = _linear_back(P, G, "cond", cbn, gfused[:, T:])
        G["cond.bn.g"] = (gcbn * chat).sum(axis=0)
        G["cond.bn.b"] = gcbn.sum(axis=0)
        # no gradient flows into c itself; the input condition is data
    temb, a0, g0 = cache["time"]
    gg0 = _linear_back(P, G, "time.1", g0, gt)
    _linear_back(P, G, "time.0", temb, gg0 * gelu_grad(a0))
    return {k: np.asarray(G[k], dtype=P[k].dtype).reshape(P[k].shape) for k in P}


def update_batchnorm(model: FlowModel, cache) -> None:
    """Fold the batch statistics of a training forward pass into the
    running estimates (momentum 0.1, unbiased variance)."""
    if "cond" not in cache:
        return
    _, _, _, train, mean, var = cache["cond"]
    if not train:
        return
    n = cache["x"].shape[0]
    unbiased = var * n / max(n - 1, 1)
    m = BN_MOMENTUM
    model.buffers["cond.bn.mean"] = ((1 - m) * model.buffers["cond.bn.mean"] + m * mean).astype(model.dtype)
    model.buffers["cond.bn.var"] = ((1 - m) * model.buffers["cond.bn.var"] + m * unbiased).astype(model.dtype)
