"""Checkpoint files: ``<name>.manifest.json`` + ``<name>.params.f32``.

The manifest lists every tensor with its shape and byte offset into the
params file. Parameters and batch-norm buffers are stored as little-endian
float32; standardization statistics are stored in the manifest as JSON
floats, which round-trip float64 exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..numeric import StandardizeStats
from .model import Architecture, FlowModel, param_shapes

FORMAT_VERSION = 1
F32LE = np.dtype("<f4")


def _paths(path):
    base = str(path)
    for suffix in (".manifest.json", ".params.f32"):
        if base.endswith(suffix):
            base = base[: -len(suffix)]
    return Path(base + ".manifest.json"), Path(base + ".params.f32")


def save_checkpoint(model: FlowModel, path) -> None:
    manifest_path, params_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    tensors = []
    chunks = []
    offset = 0
    for group, table in (("param", model.params), ("buffer", model.buffers)):
        for name, value in table.items():
            raw = np.ascontiguousarray(value, dtype=F32LE).tobytes()
            tensors.append({"name": name, "kind": group, "shape": list(value.shape), "offset": offset})
            chunks.append(raw)
            offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "architecture": model.arch.to_dict(),
        "objective": model.objective,
        "cond_dropout": model.cond_dropout,
        "standardize": None
        if model.stats is None
        else {"mean": model.stats.mean.tolist(), "std": model.stats.std.tolist()},
        "tensors": tensors,
        "total_bytes": offset,
    }
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    params_path.write_bytes(b"".join(chunks))


def load_checkpoint(path) -> FlowModel:
    manifest_path, params_path = _paths(path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: bad JSON ({exc})") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"{manifest_path}: unsupported checkpoint version {version!r}")
    try:
        arch = Architecture(**manifest["architecture"])
    except TypeError as exc:
        raise FormatError(f"{manifest_path}: bad architecture ({exc})") from exc
    raw = params_path.read_bytes()
    if len(raw) != manifest["total_bytes"]:
        raise FormatError(
            f"{params_path}: size mismatch, expected {manifest['total_bytes']} bytes, found {len(raw)}"
        )
    expected = param_shapes(arch)
    params, buffers = {}, {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        value = np.frombuffer(raw, dtype=F32LE, count=count, offset=entry["offset"])
        value = value.reshape(shape).astype(np.float32)
        (params if entry["kind"] == "param" else buffers)[entry["name"]] = value
    if {k: tuple(v.shape) for k, v in params.items()} != expected:
        raise FormatError(f"{manifest_path}: tensor table does not match the architecture")
    std = manifest.get("standardize")
    stats = None if std is None else StandardizeStats(np.array(std["mean"]), np.array(std["std"]))
    return FlowModel(
        arch,
        params,
        buffers,
        stats,
        float(manifest.get("cond_dropout", 0.0)),
        manifest.get("objective", "cfm"),
    )
