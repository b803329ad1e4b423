"""Parameter checkpoint files.

Byte layout (all integers little-endian)::

    magic        4 bytes   b"AVCK"
    version      u32       1
    header_len   u32       length of the JSON header in bytes
    header       utf-8 JSON object (model config, fusion spec, extra metadata)
    n_tensors    u32
    then per tensor, in sorted name order:
        name_len u16, name (utf-8)
        rank     u8,  extents u32 * rank
        data     float32 * prod(extents), row-major

Values are stored as 32-bit floats whatever the training precision.  Exact
resumption of a 64-bit run uses the separate training-state archive written
by the trainer.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"AVCK"
VERSION = 1


def save_checkpoint(path, params: dict, header: dict) -> None:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(head)), head, struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = params[name]
        arr = np.asarray(getattr(arr, "data", arr), dtype="<f4")
        key = name.encode("utf-8")
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(header, {name: float32 array})``."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    try:
        version, hlen = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        pos = 12
        header = json.loads(buf[pos : pos + hlen].decode("utf-8"))
        pos += hlen
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + klen].decode("utf-8")
            pos += klen
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            n = int(np.prod(shape, dtype=np.int64))
            tensors[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(shape).copy()
            pos += 4 * n
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return header, tensors
