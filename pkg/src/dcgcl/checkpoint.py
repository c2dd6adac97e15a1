"""Self-describing checkpoint container.

Layout: the magic line ``DCGCL-CKPT``, one line of JSON (sorted keys) with
the config, RNG state, scalar optimizer state and a tensor index, then the
raw tensor bytes as little-endian float64 in index order. Nothing in the file
depends on wall-clock time, so identical state gives identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"DCGCL-CKPT\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    params: dict[str, np.ndarray]
    epoch: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    rng_state: dict | None = None


def _groups(ckpt: Checkpoint):
    return (("param", ckpt.params), ("adam_m", ckpt.first_moment), ("adam_v", ckpt.second_moment))


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    index, blobs, offset = [], [], 0
    for group, grids in _groups(ckpt):
        for name in sorted(grids):
            arr = np.ascontiguousarray(grids[name], dtype="<f8")
            if not np.all(np.isfinite(arr)):
                raise CheckpointError(f"refusing to save non-finite {group} {name!r}")
            index.append({"group": group, "name": name, "shape": list(arr.shape), "offset": offset})
            blobs.append(arr.tobytes(order="C"))
            offset += arr.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "epoch": ckpt.epoch,
        "config": ckpt.config,
        "optimizer": ckpt.optimizer,
        "rng_state": ckpt.rng_state,
        "tensors": index,
    }
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(line)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    end = raw.index(b"\n", len(MAGIC))
    header = json.loads(raw[len(MAGIC):end])
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    body = raw[end + 1:]
    groups = {"param": {}, "adam_m": {}, "adam_v": {}}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start + 8 * count > len(body):
            raise CheckpointError(f"{path}: truncated tensor {entry['name']!r}")
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=start).reshape(shape)
        groups[entry["group"]][entry["name"]] = arr.astype(np.float64)
    return Checkpoint(config=header["config"], params=groups["param"], epoch=header["epoch"],
                      first_moment=groups["adam_m"], second_moment=groups["adam_v"],
                      optimizer=header["optimizer"], rng_state=header["rng_state"])
