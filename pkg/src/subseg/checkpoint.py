"""Versioned binary checkpoint format shared by all model kinds.

Layout (all integers little-endian):
    magic   4 bytes  b"SSEG"
    version u32      currently 1
    kind    u32 len + utf-8 bytes    e.g. "sslm", "baseline-lm"
    hyper   u32 len + utf-8 JSON (sorted keys, compact separators)
    count   u32      number of tensors
    per tensor:
        name  u32 len + utf-8 bytes
        ndim  u32
        shape ndim × u64
        data  row-major float64 little-endian

Hyperparameters carry everything needed to rebuild the model shell (vocab,
lexicon, dims), so a checkpoint is self-contained. Writing is deterministic:
identical inputs yield byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError

MAGIC = b"SSEG"
VERSION = 1


@dataclass
class Checkpoint:
    kind: str
    hyper: dict
    tensors: dict[str, np.ndarray]


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def dumps_checkpoint(kind: str, hyper: dict, tensors: list[tuple[str, np.ndarray]]) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_str(kind)]
    hjson = json.dumps(hyper, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    parts.append(_pack_str(hjson))
    parts.append(struct.pack("<I", len(tensors)))
    seen = set()
    for name, arr in tensors:
        if name in seen:
            raise DataError(f"duplicate tensor name in checkpoint: {name!r}")
        seen.add(name)
        a = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(_pack_str(name))
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape) if a.ndim else b"")
        parts.append(a.tobytes())
    return b"".join(parts)


def write_checkpoint(
    path, kind: str, hyper: dict, tensors: list[tuple[str, np.ndarray]]
) -> None:
    blob = dumps_checkpoint(kind, hyper, tensors)
    with open(path, "wb") as f:
        f.write(blob)


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise DataError(f"truncated checkpoint: {self.path}")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        n = self.u32()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise DataError(f"corrupt string in checkpoint: {self.path}") from e


def read_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    r = _Reader(blob, path)
    if r.take(4) != MAGIC:
        raise DataError(f"not a checkpoint file (bad magic): {path}")
    version = r.u32()
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}: {path}")
    kind = r.string()
    try:
        hyper = json.loads(r.string())
    except json.JSONDecodeError as e:
        raise DataError(f"corrupt hyperparameter block: {path}") from e
    count = r.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.string()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim)) if ndim else ()
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape)
        if name in tensors:
            raise DataError(f"duplicate tensor {name!r} in checkpoint: {path}")
        tensors[name] = np.array(data, dtype=np.float64)
    if r.pos != len(blob):
        raise DataError(f"trailing bytes after checkpoint payload: {path}")
    return Checkpoint(kind=kind, hyper=hyper, tensors=tensors)


def expect_shapes(ck: Checkpoint, expected: dict[str, tuple]) -> None:
    """Validate the tensor table against shapes derived from hyperparams."""
    missing = sorted(set(expected) - set(ck.tensors))
    extra = sorted(set(ck.tensors) - set(expected))
    if missing or extra:
        raise DataError(
            f"checkpoint tensor mismatch; missing={missing}, unexpected={extra}"
        )
    for name, shape in expected.items():
        got = ck.tensors[name].shape
        if tuple(got) != tuple(shape):
            raise DataError(f"tensor {name!r} has shape {got}, expected {tuple(shape)}")
