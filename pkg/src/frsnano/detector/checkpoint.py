"""Binary checkpoint format.

Layout (all integers little-endian uint32)::

    magic   b"FRSNANO\\0"
    version
    count
    count x { name_len, name (utf-8), rank, extents[rank], payload (f64 LE) }
"""

from __future__ import annotations

import os
import struct
from collections import OrderedDict
from typing import Dict, Iterable, Tuple

import numpy as np

MAGIC = b"FRSNANO\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(named: Iterable[Tuple[str, np.ndarray]]) -> bytes:
    named = [(n, np.asarray(a, dtype=np.float64)) for n, a in named]
    parts = [MAGIC, struct.pack("<II", VERSION, len(named))]
    for name, arr in named:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f8").tobytes(order="C"))
    return b"".join(parts)


def loads(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError(f"truncated checkpoint: needed {n} bytes at offset {pos}, have {len(blob) - pos}")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    if take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        try:
            name = take(nlen).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"corrupted tensor name at offset {pos}") from exc
        (rank,) = struct.unpack("<I", take(4))
        if not 1 <= rank <= 4:
            raise CheckpointError(f"tensor {name!r}: invalid rank {rank}")
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape))
        out[name] = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes after {count} tensors")
    return out


def save(path: str, named: Iterable[Tuple[str, np.ndarray]]) -> None:
    """Atomic write: readers never observe a half-written file."""
    blob = dumps(named)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load(path: str) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        return loads(fh.read())


def check_compatible(expected: Dict[str, Tuple[int, ...]], loaded: Dict[str, np.ndarray]) -> None:
    """Raise naming the first tensor (in expected order) that is missing or misshapen."""
    for name, shape in expected.items():
        if name not in loaded:
            raise CheckpointError(f"tensor {name!r} missing from checkpoint")
        if tuple(loaded[name].shape) != tuple(shape):
            raise CheckpointError(f"tensor {name!r}: checkpoint shape {loaded[name].shape} != model shape {shape}")
    extra = [n for n in loaded if n not in expected]
    if extra:
        raise CheckpointError(f"tensor {extra[0]!r} in checkpoint is not part of the model")


def save_model(path: str, model) -> None:
    save(path, [(n, t.data) for n, t in model.named_parameters()])


def load_model(path: str, model) -> None:
    """Load into ``model``; on any error the model is left untouched."""
    loaded = load(path)
    check_compatible({n: t.shape for n, t in model.named_parameters()}, loaded)
    model.replace_parameters(loaded)
