"""Binary container for checkpoints and embedding tables.

Layout, all integers little-endian:

    magic   4 bytes (ASCII tag, e.g. b"NRDF" or b"NRDE")
    version u32
    hlen    u32, byte length of the JSON header
    header  JSON: {"config": {...}, "meta": {...},
                   "arrays": [{"name": str, "shape": [int, ...]}, ...]}
    payload declared arrays, float32 little-endian, C order, in header order
    crc     u32, CRC-32 of the payload bytes

Arrays are stored as float32 (the on-disk contract); callers that need a
bit-exact round-trip keep their state in float32.  Integer bookkeeping
(step counters and the like) belongs in ``meta``, which is exact JSON.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np


class ContainerError(ValueError):
    """Malformed, truncated, corrupt, or wrong-version container file."""


_HEAD = struct.Struct("<4sII")
_CRC = struct.Struct("<I")


def save_container(path, magic: bytes, arrays: dict, config: dict | None = None,
                   meta: dict | None = None, version: int = 1) -> None:
    """Write named float32 arrays plus JSON config/meta under a magic tag.

    Array order in the file follows dict insertion order, which is the
    declared order contract for every format built on this container.
    """
    if len(magic) != 4:
        raise ValueError("magic must be exactly 4 bytes")
    manifest = []
    chunks = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
    header = json.dumps(
        {"config": config or {}, "meta": meta or {}, "arrays": manifest},
        sort_keys=True,
    ).encode("utf-8")
    payload = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(magic, version, len(header)))
        fh.write(header)
        fh.write(payload)
        fh.write(_CRC.pack(zlib.crc32(payload)))


def load_container(path, magic: bytes, version: int = 1):
    """Read a container back as (arrays, config, meta).

    Raises ContainerError on wrong magic, wrong version, truncation, or a
    payload checksum mismatch.  Arrays come back float32, C order.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEAD.size:
        raise ContainerError(f"{path}: truncated before header")
    got_magic, got_version, hlen = _HEAD.unpack_from(blob, 0)
    if got_magic != magic:
        raise ContainerError(
            f"{path}: bad magic {got_magic!r}, expected {magic!r}"
        )
    if got_version != version:
        raise ContainerError(
            f"{path}: format version {got_version}, expected {version}"
        )
    off = _HEAD.size
    if len(blob) < off + hlen:
        raise ContainerError(f"{path}: truncated inside header")
    try:
        header = json.loads(blob[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: unreadable header ({exc})") from exc
    off += hlen

    arrays: dict[str, np.ndarray] = {}
    for entry in header.get("arrays", []):
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64)) if shape else 4
        if len(blob) < off + nbytes:
            raise ContainerError(
                f"{path}: truncated inside array {entry['name']!r}"
            )
        flat = np.frombuffer(blob[off:off + nbytes], dtype="<f4")
        arrays[entry["name"]] = flat.reshape(shape).copy()
        off += nbytes
    if len(blob) < off + _CRC.size:
        raise ContainerError(f"{path}: truncated before checksum")
    (want_crc,) = _CRC.unpack_from(blob, off)
    payload = blob[_HEAD.size + hlen:off]
    if zlib.crc32(payload) != want_crc:
        raise ContainerError(f"{path}: payload checksum mismatch")
    if off + _CRC.size != len(blob):
        raise ContainerError(f"{path}: trailing bytes after checksum")
    return arrays, header.get("config", {}), header.get("meta", {})
