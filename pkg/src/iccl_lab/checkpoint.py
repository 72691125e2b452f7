"""Binary checkpoint container.

Layout: the 5-byte magic ``ICCL1`` followed by records until end of file::

    u32 LE  name length
    bytes   UTF-8 name
    u32 LE  rank
    u32 LE  each dimension
    f64 LE  values, row-major

Centroids live under ``centroid/`` and optimizer buffers under ``opt/``.
Records are written in sorted name order so save -> load -> save is
byte-identical.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ICCL1"
CENTROID_PREFIX = "centroid/"
OPT_PREFIX = "opt/"


class CheckpointError(ValueError):
    pass


def dumps(arrays):
    out = [MAGIC]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def loads(buf):
    if not buf.startswith(MAGIC):
        raise CheckpointError("bad magic string; not an ICCL1 checkpoint")
    pos = len(MAGIC)
    arrays = {}

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"truncated checkpoint while reading {what} at byte {pos}")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    while pos < len(buf):
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        try:
            name = take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"corrupt record name at byte {pos}") from exc
        (rank,) = struct.unpack("<I", take(4, f"rank of {name!r}"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of {name!r}"))
        count = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(take(8 * count, f"values of {name!r}"), dtype="<f8")
        if name in arrays:
            raise CheckpointError(f"duplicate record {name!r}")
        arrays[name] = values.reshape(dims).astype(np.float64)
    return arrays


def save(path, arrays):
    Path(path).write_bytes(dumps(arrays))


def load(path):
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint {p} does not exist")
    return loads(p.read_bytes())
