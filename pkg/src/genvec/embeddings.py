"""Embedding matrices and their on-disk format.

A matrix named ``base`` lives in three sibling files::

    base.meta.json   {"dim": D, "count": N, "dtype": "f32le"}
    base.f32         N*D little-endian float32 values, row-major
    base.ids         optional, N newline-separated UTF-8 identifiers
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError

F32LE = np.dtype("<f4")


@dataclass(frozen=True)
class EmbeddingMatrix:
    data: np.ndarray
    ids: list[str] | None = field(default=None)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DimensionError(f"embedding matrix must be 2-D, got shape {data.shape}")
        if data.shape[1] < 1:
            raise DimensionError("embedding dimension must be >= 1")
        bad = np.argwhere(~np.isfinite(data))
        if len(bad):
            r, c = bad[0]
            raise FormatError(f"non-finite value at row {r}, column {c}")
        object.__setattr__(self, "data", data)
        if self.ids is not None:
            ids = [str(i) for i in self.ids]
            if len(ids) != data.shape[0]:
                raise DimensionError(f"{len(ids)} ids for {data.shape[0]} rows")
            if len(set(ids)) != len(ids):
                raise FormatError("row ids must be unique")
            object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def row_ids(self) -> list[str]:
        return self.ids if self.ids is not None else [str(i) for i in range(self.n)]

    def __len__(self):
        return self.n


def as_array(X) -> np.ndarray:
    if isinstance(X, EmbeddingMatrix):
        return X.data
    return np.asarray(X)


def _paths(path) -> tuple[Path, Path, Path]:
    base = str(path)
    for suffix in (".meta.json", ".f32", ".ids"):
        if base.endswith(suffix):
            base = base[: -len(suffix)]
            break
    return Path(base + ".meta.json"), Path(base + ".f32"), Path(base + ".ids")


def save_embeddings(X, path) -> None:
    if not isinstance(X, EmbeddingMatrix):
        X = EmbeddingMatrix(np.asarray(X))
    meta_path, raw_path, ids_path = _paths(path)
    meta_path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"dim": X.dim, "count": X.n, "dtype": "f32le"}
    meta_path.write_text(json.dumps(meta) + "\n", encoding="utf-8")
    raw_path.write_bytes(np.ascontiguousarray(X.data, dtype=F32LE).tobytes())
    if X.ids is not None:
        for i in X.ids:
            if "\n" in i:
                raise FormatError(f"id {i!r} contains a newline")
        ids_path.write_text("".join(i + "\n" for i in X.ids), encoding="utf-8")
    elif ids_path.exists():
        ids_path.unlink()


def load_embeddings(path) -> EmbeddingMatrix:
    meta_path, raw_path, ids_path = _paths(path)
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{meta_path}: bad JSON ({exc})") from exc
    if not isinstance(meta, dict):
        raise FormatError(f"{meta_path}: expected a JSON object")
    dim, count, dtype = meta.get("dim"), meta.get("count"), meta.get("dtype")
    if dtype != "f32le":
        raise FormatError(f"{meta_path}: unsupported dtype {dtype!r}")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise FormatError(f"{meta_path}: dim must be a positive integer, got {dim!r}")
    if not isinstance(count, int) or isinstance(count, bool) or count < 0:
        raise FormatError(f"{meta_path}: count must be a non-negative integer, got {count!r}")

    raw = raw_path.read_bytes()
    expected = count * dim * 4
    if len(raw) != expected:
        raise FormatError(
            f"{raw_path}: size mismatch, expected {expected} bytes, found {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=F32LE).reshape(count, dim).astype(np.float32)

    ids = None
    if ids_path.exists():
        ids = ids_path.read_text(encoding="utf-8").split("\n")
        if ids and ids[-1] == "":
            ids.pop()
        if len(ids) != count:
            raise FormatError(f"{ids_path}: {len(ids)} ids for {count} rows")
    return EmbeddingMatrix(data, ids)
