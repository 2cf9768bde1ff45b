"""LSTW weight files.

Layout (all integers little-endian)::

    b"LSTW"  u16 version
    u32 metadata length, metadata bytes (UTF-8 JSON object)
    repeated: u32 name length, name bytes, u32 rank, u32 extent * rank,
              float32 payload (row-major)
    u32 CRC32 of every preceding byte

Values are stored as float32, so 64-bit weights are rounded once on save.
"""
from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"LSTW"
VERSION = 1


class WeightFormatError(ValueError):
    pass


class ChecksumError(WeightFormatError):
    pass


@dataclass
class WeightStore:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for name in self.tensors:
            if not name or len(name.encode()) > 0xFFFF:
                raise ValueError(f"bad tensor name {name!r}")

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if k.startswith(prefix)}


def shapes_hash(shapes: dict[str, tuple]) -> str:
    text = ";".join(f"{k}:{'x'.join(map(str, v))}" for k, v in sorted(shapes.items()))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def encode_store(store: WeightStore) -> bytes:
    meta = json.dumps(store.metadata, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<HI", VERSION, len(meta)), meta]
    for name, value in store.tensors.items():
        raw = name.encode()
        arr = np.asarray(value)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_store(blob: bytes) -> WeightStore:
    if len(blob) < 14 or blob[:4] != MAGIC:
        raise WeightFormatError("not an LSTW weight file (bad magic or truncated header)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("weight file checksum mismatch")
    version, meta_len = struct.unpack_from("<HI", body, 4)
    if version != VERSION:
        raise WeightFormatError(f"unsupported weight format version {version}")
    pos = 10
    try:
        meta = json.loads(body[pos:pos + meta_len].decode())
        pos += meta_len
        tensors = {}
        while pos < len(body):
            (n,) = struct.unpack_from("<I", body, pos)
            name = body[pos + 4:pos + 4 + n].decode()
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", body, pos)
            shape = struct.unpack_from(f"<{rank}I", body, pos + 4)
            pos += 4 + 4 * rank
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * count > len(body):
                raise WeightFormatError(f"tensor {name!r} payload is truncated")
            data = np.frombuffer(body, dtype="<f4", count=count, offset=pos)
            pos += 4 * count
            if name in tensors:
                raise WeightFormatError(f"duplicate tensor {name!r}")
            tensors[name] = data.astype(np.float64).reshape(shape)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFormatError(f"malformed weight file: {exc}") from None
    return WeightStore(tensors, meta)


def save_weights(store: WeightStore, path) -> None:
    Path(path).write_bytes(encode_store(store))


def load_weights(path) -> WeightStore:
    return decode_store(Path(path).read_bytes())
