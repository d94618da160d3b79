"""Binary checkpoint container: named float64 arrays, bitwise round-trip.

Layout (little-endian): magic b"X2F1", u32 entry count, then per entry a
u16 name length, the UTF-8 name, u8 rank, u32 dims[rank], and the raw
float64 payload in row-major order.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"X2F1"


class CheckpointError(Exception):
    """Malformed container; message carries the byte offset."""


def save(path, entries: dict) -> None:
    """Write name -> ndarray entries in dict order."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", len(entries))
    for name, arr in entries.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        if arr.ndim > 255:
            raise CheckpointError(f"rank {arr.ndim} too large for '{name}'")
        nb = name.encode("utf-8")
        blob += struct.pack("<H", len(nb))
        blob += nb
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load(path) -> dict:
    """Read entries back in file order. Raises CheckpointError on damage."""
    with open(path, "rb") as fh:
        buf = fh.read()

    def need(off, n, what):
        if off + n > len(buf):
            raise CheckpointError(f"truncated {what} at byte offset {off}")
        return off + n

    off = need(0, 4, "magic")
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad magic {buf[:4]!r} at byte offset 0")
    end = need(off, 4, "entry count")
    (count,) = struct.unpack_from("<I", buf, off)
    off = end

    out = {}
    for _ in range(count):
        end = need(off, 2, "name length")
        (nlen,) = struct.unpack_from("<H", buf, off)
        off = end
        end = need(off, nlen, "name")
        name = buf[off:end].decode("utf-8")
        off = end
        end = need(off, 1, "rank")
        rank = buf[off]
        off = end
        end = need(off, 4 * rank, "dims")
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off = end
        size = 1
        for d in dims:
            size *= d
        end = need(off, 8 * size, f"payload of '{name}'")
        arr = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(dims)
        out[name] = arr.astype(np.float64, copy=True)
        off = end
    return out
