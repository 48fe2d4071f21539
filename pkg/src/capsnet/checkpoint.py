"""Checkpoints: a manifest.json plus one little-endian binary blob.

The manifest records the model and training configs, the epoch counter,
and a table of tensor entries (name, section, shape, dtype, byte offset,
byte length) into ``params.bin``; the blob's SHA-256 is stored so
corruption surfaces as :class:`CheckpointError` rather than silent drift.
Arrays are written with ``tobytes()`` and read back bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Union

import numpy as np

from .config import ModelConfig, TrainConfig
from .errors import CheckpointError
from .ops import RunningStats
from .tensor import Tensor
from .training import TrainState

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bin"

_ALLOWED_DTYPES = ("<f4", "<f8")


def _entries(state: TrainState):
    """Deterministic (section, name, array) order: params, stats, velocity."""
    for name in sorted(state.params):
        yield "param", name, state.params[name].data
    for name in sorted(state.stats):
        yield "bn_mean", name, state.stats[name].mean
        yield "bn_var", name, state.stats[name].var
    for name in sorted(state.velocity):
        yield "velocity", name, state.velocity[name]


def save_checkpoint(path, model_config: ModelConfig, state: TrainState) -> None:
    """Write ``manifest.json`` and ``params.bin`` into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    chunks: list[bytes] = []
    table = []
    offset = 0
    for section, name, arr in _entries(state):
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        raw = arr.astype(dtype, copy=False).tobytes()
        table.append({
            "name": name,
            "section": section,
            "shape": list(arr.shape),
            "dtype": dtype.str,
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format_version": FORMAT_VERSION,
        "epoch": state.epoch,
        "model_config": model_config.to_dict(),
        "train_config": state.config.to_dict(),
        "tensors": table,
        "blob_bytes": len(blob),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    (path / BLOB_NAME).write_bytes(blob)
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[ModelConfig, TrainState]:
    """Rebuild configs and a TrainState bit-exactly from ``path``."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    blob_path = path / BLOB_NAME
    if not manifest_path.exists() or not blob_path.exists():
        raise CheckpointError(f"{path} is not a checkpoint directory "
                              f"(needs {MANIFEST_NAME} and {BLOB_NAME})")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{manifest_path}: invalid JSON: {e}") from e
    for key in ("format_version", "epoch", "model_config", "train_config",
                "tensors", "blob_bytes", "blob_sha256"):
        if key not in manifest:
            raise CheckpointError(f"{manifest_path}: missing key {key!r}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {manifest['format_version']}")
    blob = blob_path.read_bytes()
    if len(blob) != manifest["blob_bytes"]:
        raise CheckpointError(
            f"{blob_path}: has {len(blob)} bytes, manifest says {manifest['blob_bytes']}")
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest["blob_sha256"]:
        raise CheckpointError(f"{blob_path}: SHA-256 mismatch (file {digest[:12]}..., "
                              f"manifest {manifest['blob_sha256'][:12]}...)")

    model_config = ModelConfig.from_dict(manifest["model_config"])
    train_config = TrainConfig.from_dict(manifest["train_config"])

    params: dict[str, Tensor] = {}
    means: dict[str, np.ndarray] = {}
    variances: dict[str, np.ndarray] = {}
    velocity: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        for key in ("name", "section", "shape", "dtype", "offset", "nbytes"):
            if key not in entry:
                raise CheckpointError(f"tensor entry missing key {key!r}: {entry}")
        if entry["dtype"] not in _ALLOWED_DTYPES:
            raise CheckpointError(f"tensor {entry['name']!r} has unsupported dtype "
                                  f"{entry['dtype']!r} (need one of {_ALLOWED_DTYPES})")
        start, nbytes = entry["offset"], entry["nbytes"]
        if start < 0 or start + nbytes > len(blob):
            raise CheckpointError(f"tensor {entry['name']!r} extends past the blob")
        dtype = np.dtype(entry["dtype"])
        count = nbytes // dtype.itemsize
        if count * dtype.itemsize != nbytes or count != int(np.prod(entry["shape"], dtype=np.int64)):
            raise CheckpointError(f"tensor {entry['name']!r}: byte count does not match shape")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=start)
        arr = arr.reshape(entry["shape"]).astype(dtype.newbyteorder("="), copy=True)
        section = entry["section"]
        if section == "param":
            params[entry["name"]] = Tensor(arr, requires_grad=True)
        elif section == "bn_mean":
            means[entry["name"]] = arr
        elif section == "bn_var":
            variances[entry["name"]] = arr
        elif section == "velocity":
            velocity[entry["name"]] = arr
        else:
            raise CheckpointError(f"unknown tensor section {section!r}")

    if set(means) != set(variances):
        raise CheckpointError("batch-norm mean/var entries do not pair up")
    stats: dict[str, RunningStats] = {}
    for name, mean in means.items():
        rs = RunningStats(mean.shape[0], dtype=mean.dtype)
        rs.load({"mean": mean, "var": variances[name]})
        stats[name] = rs
    if set(velocity) != set(params):
        raise CheckpointError("velocity entries do not match parameter entries")

    state = TrainState(params=params, stats=stats, velocity=velocity,
                       epoch=int(manifest["epoch"]), config=train_config)
    return model_config, state
