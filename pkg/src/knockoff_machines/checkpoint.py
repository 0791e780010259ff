"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"DKM1"                     4 bytes magic
    version                     u32
    metadata length             u64
    metadata                    UTF-8 JSON
    tensors                     float64 LE, in the order listed under "tensors"
    crc64                       u64, CRC-64/XZ of every preceding byte
"""
import json
import struct

import numba
import numpy as np

from .errors import CorruptFile, FormatVersionMismatch

MAGIC = b"DKM1"
VERSION = 1
_HEAD = struct.Struct("<4sIQ")
_CRC = struct.Struct("<Q")


def _make_table():
    poly = 0xC96C5795D7870F42  # ECMA-182, reflected
    table = np.zeros(256, dtype=np.uint64)
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ poly if c & 1 else c >> 1
        table[i] = c
    return table


_TABLE = _make_table()


@numba.njit(cache=True)
def _crc64_kernel(data, table, crc):
    for b in data:
        crc = table[(crc ^ numba.uint64(b)) & numba.uint64(0xFF)] ^ (crc >> numba.uint64(8))
    return crc


def crc64(data):
    """CRC-64/XZ checksum of a bytes-like object."""
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    crc = _crc64_kernel(buf, _TABLE, np.uint64(0xFFFFFFFFFFFFFFFF))
    return int(crc) ^ 0xFFFFFFFFFFFFFFFF


def write_container(path, metadata, tensors):
    """``tensors`` is an ordered mapping name -> float64 array."""
    meta = dict(metadata)
    meta["tensors"] = [[name, list(np.shape(arr))] for name, arr in tensors.items()]
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [_HEAD.pack(MAGIC, VERSION, len(blob)), blob]
    for arr in tensors.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(_CRC.pack(crc64(body)))


def read_container(path):
    """Return ``(metadata, tensors)``; validates magic, version and checksum."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise FormatVersionMismatch(f"{path}: not a knockoff machine checkpoint (bad magic)")
    if len(raw) < _HEAD.size + _CRC.size:
        raise CorruptFile(f"{path}: truncated header")
    _, version, meta_len = _HEAD.unpack_from(raw)
    if version != VERSION:
        raise FormatVersionMismatch(f"{path}: format version {version}, expected {VERSION}")
    body, (stored,) = raw[: -_CRC.size], _CRC.unpack(raw[-_CRC.size :])
    if crc64(body) != stored:
        raise CorruptFile(f"{path}: checksum mismatch (truncated or damaged)")
    offset = _HEAD.size + meta_len
    try:
        meta = json.loads(body[_HEAD.size : offset].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: unreadable metadata") from exc
    tensors = {}
    for name, shape in meta["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(body):
            raise CorruptFile(f"{path}: tensor {name} runs past end of file")
        tensors[name] = np.frombuffer(body[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(body):
        raise CorruptFile(f"{path}: trailing bytes after tensors")
    return meta, tensors
