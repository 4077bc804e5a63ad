"""Self-describing binary container for named float32 tensors.

Layout (all integers unsigned 32-bit little-endian):

    magic "DGTA" | version | entry count
    per entry: name length, UTF-8 name, rank, extents..., float32 LE payload
    trailing bytes: UTF-8 "key=value" metadata lines

Round trips are bitwise: payload bytes are written and read untouched.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ArchiveError

MAGIC = b"DGTA"
VERSION = 1


def write_archive(path, entries: dict, metadata: dict | None = None) -> None:
    """Write named arrays plus string metadata to path."""
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    buf += struct.pack("<I", len(entries))
    seen = set()
    for name, arr in entries.items():
        if not name:
            raise ArchiveError("entry name must be non-empty")
        if name in seen:
            raise ArchiveError(f"duplicate entry name {name!r}")
        seen.add(name)
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")  # tobytes() below always emits C order
        buf += struct.pack("<I", len(raw))
        buf += raw
        buf += struct.pack("<I", arr.ndim)
        for extent in arr.shape:
            if extent <= 0:
                raise ArchiveError(f"entry {name!r} has non-positive extent {extent}")
            buf += struct.pack("<I", extent)
        buf += arr.tobytes()
    for key, value in (metadata or {}).items():
        key, value = str(key), str(value)
        if "=" in key or "\n" in key or "\n" in value:
            raise ArchiveError(f"metadata key/value not encodable: {key!r}")
        buf += f"{key}={value}\n".encode("utf-8")
    with open(path, "wb") as f:
        f.write(buf)


def read_archive(path):
    """Read (entries, metadata) back; malformed bytes raise ArchiveError
    naming the offending byte offset."""
    with open(path, "rb") as f:
        raw = f.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(raw):
            raise ArchiveError(f"truncated while reading {what}", offset=pos)
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise ArchiveError("bad magic, not a tensor archive", offset=0)
    version = struct.unpack("<I", take(4, "version"))[0]
    if version != VERSION:
        raise ArchiveError(f"unsupported format version {version}", offset=4)
    count = struct.unpack("<I", take(4, "entry count"))[0]

    entries = {}
    for i in range(count):
        name_len = struct.unpack("<I", take(4, f"entry {i} name length"))[0]
        try:
            name = take(name_len, f"entry {i} name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise ArchiveError(f"entry {i} name is not valid UTF-8", offset=pos - name_len) from e
        if name in entries:
            raise ArchiveError(f"duplicate entry name {name!r}", offset=pos - name_len)
        rank = struct.unpack("<I", take(4, f"entry {name!r} rank"))[0]
        shape = tuple(
            struct.unpack("<I", take(4, f"entry {name!r} extent {d}"))[0] for d in range(rank)
        )
        if any(e <= 0 for e in shape):
            raise ArchiveError(f"entry {name!r} has non-positive extent", offset=pos - 4)
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = take(4 * size, f"entry {name!r} payload")
        arr = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        entries[name] = arr

    metadata = {}
    if pos < len(raw):
        try:
            text = raw[pos:].decode("utf-8")
        except UnicodeDecodeError as e:
            raise ArchiveError("metadata block is not valid UTF-8", offset=pos) from e
        for line in text.splitlines():
            if not line:
                continue
            if "=" not in line:
                raise ArchiveError(f"metadata line without '=': {line!r}", offset=pos)
            key, value = line.split("=", 1)
            metadata[key] = value
    return entries, metadata
