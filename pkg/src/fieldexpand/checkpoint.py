"""Checkpoint archive: JSON metadata header plus raw float32 weight blobs.

Layout: 4-byte magic, little-endian uint64 header length, UTF-8 JSON header
(format version, config hash, step, stage, alpha, full config, scalar
states, and a name -> (offset, shape) index), then the concatenated
little-endian float32 arrays. Writes go through a temp file and an atomic
rename.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"VFEC"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable or malformed checkpoint file."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint written by an incompatible format version."""


@dataclass
class Checkpoint:
    config: dict[str, Any]
    config_hash: str
    step: int
    stage: int
    alpha: float
    tensors: dict[str, np.ndarray]
    scalars: dict[str, float] = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    index: dict[str, dict[str, Any]] = {}
    offset = 0
    blobs: list[bytes] = []
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f4")
        index[name] = {"offset": offset, "shape": list(arr.shape)}
        raw = arr.tobytes()
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "config_hash": ckpt.config_hash,
        "step": ckpt.step,
        "stage": ckpt.stage,
        "alpha": ckpt.alpha,
        "config": ckpt.config,
        "scalars": ckpt.scalars,
        "index": index,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(header_bytes)))
            fh.write(header_bytes)
            for raw in blobs:
                fh.write(raw)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint archive")
    (header_len,) = struct.unpack("<Q", data[4:12])
    if len(data) < 12 + header_len:
        raise CheckpointError(f"{path} is truncated")
    try:
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path} has a malformed header: {exc}") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path} has format version {version}, expected {FORMAT_VERSION}"
        )
    blob = data[12 + header_len :]
    tensors: dict[str, np.ndarray] = {}
    for name, entry in header["index"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start)
        tensors[name] = arr.reshape(shape).copy()
    return Checkpoint(
        config=header["config"],
        config_hash=header["config_hash"],
        step=int(header["step"]),
        stage=int(header["stage"]),
        alpha=float(header["alpha"]),
        tensors=tensors,
        scalars={k: float(v) for k, v in header["scalars"].items()},
    )
