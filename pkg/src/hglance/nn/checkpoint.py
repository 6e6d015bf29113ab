"""Binary checkpoint format.

Layout (all integers little-endian uint32)::

    b"HGLC" | version | entry count
    per entry: name length | name (UTF-8) | rank | dims... | float64 LE values
    metadata length | metadata (UTF-8 JSON)
    SHA-256 digest of every preceding byte

Adam moment buffers are stored as ordinary entries named ``~m/<name>`` and
``~v/<name>``, the Adam step counter as the rank-0 entry ``~t``.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from ..errors import ChecksumMismatch, CheckpointFormatError
from .params import ParameterStore

MAGIC = b"HGLC"
VERSION = 1
_U32 = struct.Struct("<I")


def _entries(store: ParameterStore):
    for name, value in store.values.items():
        yield name, value
    for name, (m, v) in store.moments.items():
        yield "~m/" + name, m
        yield "~v/" + name, v
    if store.moments:
        yield "~t", np.array(float(store.adam_t))


def encode(store: ParameterStore, meta: dict | None = None) -> bytes:
    entries = list(_entries(store))
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(entries))]
    for name, arr in entries:
        raw = name.encode("utf-8")
        parts += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        parts += [_U32.pack(d) for d in arr.shape]
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts += [_U32.pack(len(blob)), blob]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode(data: bytes) -> tuple[ParameterStore, dict]:
    if len(data) < 12 + 32 or data[:4] != MAGIC:
        raise CheckpointFormatError("not an HGLC checkpoint")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumMismatch("checkpoint checksum mismatch")
    pos = 4

    def u32():
        nonlocal pos
        (val,) = _U32.unpack_from(body, pos)
        pos += 4
        return val

    version = u32()
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    store = ParameterStore()
    moments: dict[str, dict[str, np.ndarray]] = {}
    for _ in range(u32()):
        n = u32()
        name = body[pos:pos + n].decode("utf-8")
        pos += n
        rank = u32()
        dims = tuple(u32() for _ in range(rank))
        count = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(dims)
        pos += 8 * count
        arr = arr.astype(np.float64)
        if name == "~t":
            store.adam_t = int(arr)
        elif name.startswith("~m/") or name.startswith("~v/"):
            moments.setdefault(name[3:], {})[name[1]] = arr
        else:
            store.add(name, arr)
    n = u32()
    meta = json.loads(body[pos:pos + n].decode("utf-8"))
    if pos + n != len(body):
        raise CheckpointFormatError("trailing bytes after metadata")
    for name, mv in moments.items():
        store.moments[name] = (mv["m"], mv["v"])
    return store, meta


def atomic_write(path, data: bytes):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix="." + path.name, dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, store: ParameterStore, meta: dict | None = None):
    atomic_write(path, encode(store, meta))


def load(path) -> tuple[ParameterStore, dict]:
    return decode(Path(path).read_bytes())
