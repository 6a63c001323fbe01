"""Checkpoint fragment format shared repo-wide.

Layout (little-endian): magic ``RFCK``, format version u32, then a named
tensor table repeated until EOF: name length u32, UTF-8 name, rank u32,
dims u32[rank], float64 payload. Tensors are written sorted by name so the
same dict always produces the same bytes.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from reaction_forge.errors import MotionFormatError

MAGIC = b"RFCK"
VERSION = 1


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name in sorted(tensors):
        # ascontiguousarray promotes rank 0 to rank 1, so go through asarray
        arr = np.asarray(tensors[name], dtype="<f8")
        if arr.ndim:
            arr = np.ascontiguousarray(arr)
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise MotionFormatError(f"bad checkpoint magic {buf[:4]!r}", 0)
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise MotionFormatError(f"unsupported checkpoint version {version}", 4)
    off = 8
    out: dict[str, np.ndarray] = {}
    total = len(buf)
    while off < total:
        try:
            (name_len,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off : off + name_len].decode("utf-8")
            if len(buf) < off + name_len:
                raise struct.error("short name")
            off += name_len
            (rank,) = struct.unpack_from("<I", buf, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            nbytes = 8 * count
            if len(buf) < off + nbytes:
                raise struct.error("short payload")
            arr = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(dims)
            off += nbytes
        except (struct.error, UnicodeDecodeError) as e:
            raise MotionFormatError(f"truncated or corrupt checkpoint: {e}", off) from e
        out[name] = arr.astype(np.float64).copy()
    return out


def config_fingerprint(canonical: str) -> np.ndarray:
    """First 16 sha256 bytes of the canonical config JSON, as a float tensor."""
    digest = hashlib.sha256(canonical.encode("utf-8")).digest()[:16]
    return np.frombuffer(digest, dtype=np.uint8).astype(np.float64)
