"""Binary checkpoint layout.

    "DMGK" | u32 version | u32 entry count
    per entry: u16 name length | UTF-8 name | u8 rank | rank × u32 dims | float32 data (row-major)

All integers and floats are little-endian.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict

import numpy as np

MAGIC = b"DMGK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(entries: Dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, value in entries.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(raw: bytes) -> Dict[str, np.ndarray]:
    try:
        return _parse(raw)
    except (struct.error, ValueError, UnicodeDecodeError, IndexError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"truncated or corrupt checkpoint: {exc}") from exc


def _parse(raw: bytes) -> Dict[str, np.ndarray]:
    if raw[:4] != MAGIC:
        raise CheckpointError("not a DMGK checkpoint")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos, out = 12, {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + n].decode("utf-8")
        pos += n
        rank = raw[pos]
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        size = int(np.prod(dims, dtype=np.int64))
        out[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
        pos += 4 * size
    if pos != len(raw):
        raise CheckpointError(f"{len(raw) - pos} trailing bytes")
    return out


def save(path, entries: Dict[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(entries))
    tmp.replace(path)


def load(path) -> Dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
