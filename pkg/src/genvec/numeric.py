"""Numeric substrate: standardization, PCA, seeded sampling, distances and
symmetric matrix powers."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .embeddings import as_array
from .errors import DegenerateInputError, DimensionError, ParameterError

STD_FLOOR = 1e-8
EIG_FLOOR = 1e-8


# ---------------------------------------------------------------------------
# random streams


def rng_stream(seed: int, name: str = "default", *index: int) -> np.random.Generator:
    """Independent PCG64 generator for a named stream.

    Streams are keyed by ``(seed, crc32(name), *index)`` through
    ``SeedSequence.spawn_key``, so training noise, sampler noise and
    per-sample draws never overlap and never depend on call order.
    """
    key = (zlib.crc32(name.encode("utf-8")),) + tuple(int(i) for i in index)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return rng_stream(seed, "sample")


def sample_gaussian(n: int, d: int, seed) -> np.ndarray:
    if n < 1 or d < 1:
        raise ParameterError(f"sample_gaussian needs n, d >= 1 (got {n}, {d})")
    return _as_rng(seed).standard_normal((n, d))


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sample_logit_normal(n: int, seed) -> np.ndarray:
    """Times ``sigmoid(z)`` with ``z ~ N(0, 1)``; nudged off the endpoints
    so every value is strictly inside (0, 1)."""
    if n < 1:
        raise ParameterError("sample_logit_normal needs n >= 1")
    t = sigmoid(_as_rng(seed).standard_normal(n))
    tiny = np.finfo(float).eps
    return np.clip(t, tiny, 1.0 - tiny)


# ---------------------------------------------------------------------------
# standardization


@dataclass(frozen=True)
class StandardizeStats:
    mean: np.ndarray
    std: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def standardize_fit(X) -> StandardizeStats:
    X = np.asarray(as_array(X), dtype=np.float64)
    if X.ndim != 2 or X.size == 0:
        raise DimensionError("standardize_fit needs a non-empty 2-D matrix")
    if X.shape[0] < 2:
        raise DimensionError("standardize_fit needs at least 2 rows")
    mean = X.mean(axis=0)
    std = X.std(axis=0)  # population, divisor N
    std = np.where(std < STD_FLOOR, 1.0, std)
    return StandardizeStats(mean, std)


def _check_stats(X, stats):
    if X.ndim != 2 or X.shape[1] != stats.dim:
        raise DimensionError(f"expected {stats.dim} columns, got shape {X.shape}")


def standardize_apply(X, stats: StandardizeStats) -> np.ndarray:
    X = np.asarray(as_array(X))
    _check_stats(X, stats)
    return (X - stats.mean) / stats.std


def standardize_invert(Z, stats: StandardizeStats) -> np.ndarray:
    Z = np.asarray(as_array(Z))
    _check_stats(Z, stats)
    return Z * stats.std + stats.mean


# ---------------------------------------------------------------------------
# PCA


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # K x D, orthonormal rows
    explained_variance: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]


def pca_fit(X, k: int) -> PcaModel:
    X = np.asarray(as_array(X), dtype=np.float64)
    n, d = X.shape
    if k < 1 or k > min(n - 1, d):
        raise ParameterError(f"k={k} must be in [1, min(N-1, D)] = [1, {min(n - 1, d)}]")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    comps = vt[:k]
    # deterministic sign: largest-magnitude loading of each component is positive
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), pivot])
    comps = comps * signs[:, None]
    return PcaModel(mean, comps, (s[:k] ** 2) / (n - 1))


def pca_project(X, model: PcaModel) -> np.ndarray:
    X = np.asarray(as_array(X), dtype=np.float64)
    if X.shape[1] != model.mean.shape[0]:
        raise DimensionError(f"expected {model.mean.shape[0]} columns, got {X.shape[1]}")
    return (X - model.mean) @ model.components.T


def pca_reconstruct(Z, model: PcaModel) -> np.ndarray:
    return np.asarray(Z) @ model.components + model.mean


# ---------------------------------------------------------------------------
# distances


def l2_normalize(v) -> np.ndarray:
    """Row-wise L2 normalization of a vector or matrix."""
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateInputError("cannot normalize a zero vector")
    return v / norms


def distance(a, b, metric: str = "cosine") -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    if metric == "euclidean":
        return float(np.linalg.norm(a - b))
    if metric == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            raise DegenerateInputError("cosine distance of a zero vector")
        return float(1.0 - (a @ b) / (na * nb))
    raise ParameterError(f"unknown metric {metric!r}")


# ---------------------------------------------------------------------------
# symmetric matrix powers


def sym_matrix_power(C, p: float) -> np.ndarray:
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {C.shape}")
    if not np.allclose(C, C.T, rtol=0.0, atol=1e-8):
        raise ParameterError("sym_matrix_power requires a symmetric matrix")
    w, Q = np.linalg.eigh((C + C.T) / 2)
    w = np.maximum(w, EIG_FLOOR)
    M = (Q * w**p) @ Q.T
    return (M + M.T) / 2
