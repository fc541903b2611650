"""Versioned binary parameter checkpoints.

Layout (little endian): 8-byte magic, uint32 version, 32-byte sha256 schema
hash, uint64 training step, uint64 parameter count, then the parameters as
float64 in ``Module.parameters()`` order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"TOPOGRD\x00"
VERSION = 1
_HEADER = struct.Struct("<8sI32sQQ")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    schema_hash: bytes
    step: int
    params: np.ndarray


def save_checkpoint(path: str | Path, schema_hash: bytes, step: int, params: np.ndarray) -> None:
    params = np.ascontiguousarray(params, dtype="<f8")
    header = _HEADER.pack(MAGIC, VERSION, schema_hash, int(step), params.size)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(header + params.tobytes())
    tmp.replace(path)


def read_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, schema_hash, step, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    payload = raw[_HEADER.size:]
    if len(payload) != 8 * n:
        raise CheckpointError(f"{path}: expected {n} parameters, found {len(payload) // 8}")
    return Checkpoint(schema_hash, step, np.frombuffer(payload, dtype="<f8").astype(np.float64))


def load_into(policy, path: str | Path) -> int:
    """Load parameters into ``policy`` after checking the schema hash; returns the step."""
    ckpt = read_checkpoint(path)
    if ckpt.schema_hash != policy.schema_hash():
        raise CheckpointError(
            f"{path}: schema hash mismatch (checkpoint was written for a different grid layout or encoder)"
        )
    policy.set_flat(ckpt.params)
    return ckpt.step
