from __future__ import annotations

import numpy as np

from .embeddings import as_array
from .errors import DimensionError, FormatError
from .numeric import rng_stream


def interpolate_queries(Q, n_new: int, seed: int = 0) -> np.ndarray:
    """New queries ``w*q_i + (1-w)*q_j`` for random distinct rows ``i != j``
    and ``w ~ U(0, 1)``."""
    Q = np.asarray(as_array(Q), dtype=np.float64)
    if Q.ndim != 2 or len(Q) < 2:
        raise DimensionError("interpolate_queries needs at least 2 rows")
    rng = rng_stream(seed, "interpolate")
    n = len(Q)
    i = rng.integers(0, n, size=n_new)
    j = rng.integers(0, n - 1, size=n_new)
    j = j + (j >= i)  # uniform over the other n-1 rows
    w = rng.random(n_new)[:, None]
    return w * Q[i] + (1.0 - w) * Q[j]


def read_pairs(path) -> np.ndarray:
    """Pair file: one ``condition_row<TAB>target_row`` per line."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 2 tab-separated indices")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: indices must be integers") from exc
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def write_pairs(path, pairs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c, t in np.asarray(pairs, dtype=np.int64).reshape(-1, 2):
            fh.write(f"{c}\t{t}\n")
