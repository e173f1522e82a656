"""Checkpoint files: magic, JSON header, raw little-endian float64 tensors.

Layout::

    b"MLCKPT01" | uint64 LE header length | UTF-8 JSON header | float64 LE blob

The header lists every tensor's name, shape and element offset into the blob.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MLCKPT01"
_LEN = struct.Struct("<Q")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    meta: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        p = prefix + "/"
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    entries = []
    offset = 0
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += int(arr.size)
    header = dict(ckpt.meta)
    header["tensors"] = entries
    raw_header = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(raw_header)))
        fh.write(raw_header)
        for arr in ckpt.tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    tmp.replace(path)


def load_checkpoint(path: str | Path, expected_vocab_digest: str | None = None) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (hlen,) = _LEN.unpack_from(data, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    header = json.loads(data[start : start + hlen].decode("utf-8"))
    blob = np.frombuffer(data, dtype="<f8", offset=start + hlen)
    tensors = {}
    for e in header.pop("tensors"):
        chunk = blob[e["offset"] : e["offset"] + e["count"]]
        if chunk.size != e["count"]:
            raise CheckpointError(f"{path}: truncated tensor {e['name']}")
        tensors[e["name"]] = chunk.astype(np.float64).reshape(e["shape"])
    if expected_vocab_digest is not None and header.get("vocab_digest") != expected_vocab_digest:
        raise CheckpointError(
            f"{path}: vocab hash mismatch (checkpoint {header.get('vocab_digest')}, expected {expected_vocab_digest})"
        )
    return Checkpoint(meta=header, tensors=tensors)
