"""KWSM tensor-archive container.

Layout (all integers little-endian):

    magic  b"KWSM"
    u32    format version (currently 1)
    u32    entry count
    per entry:
        u32      name length in bytes
        bytes    name (UTF-8)
        u32      rank
        u64[r]   dims
        f32[n]   row-major data

Values are stored as 32-bit floats regardless of in-memory precision.
Loaders reject unknown versions.
"""

import os
import struct
import tempfile

import numpy as np

MAGIC = b"KWSM"
VERSION = 1


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = str(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def serialize_archive(tensors: dict) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(np.asarray(arr.shape, dtype="<u8").tobytes())
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(chunks)


def save_archive(path, tensors: dict) -> None:
    """Write named float tensors to a KWSM archive (atomic)."""
    atomic_write_bytes(path, serialize_archive(tensors))


def load_archive(path) -> dict:
    """Read a KWSM archive back into {name: float32 array}."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a KWSM archive")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported KWSM version {version}")
    out = {}
    off = 12
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            dims = np.frombuffer(blob, dtype="<u8", count=rank, offset=off)
            off += 8 * rank
            n = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(blob, dtype="<f4", count=n, offset=off)
            off += 4 * n
            out[name] = data.reshape(dims.astype(np.int64)).copy()
    except (struct.error, ValueError) as e:
        raise ValueError(f"{path}: truncated or corrupt KWSM archive") from e
    if off != len(blob):
        raise ValueError(f"{path}: trailing bytes in KWSM archive")
    return out
