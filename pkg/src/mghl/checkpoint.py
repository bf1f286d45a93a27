"""Binary parameter checkpoints.

Layout: magic "MGHL", format version (u16), tensor count (u32), then per
tensor a name (u16 length + UTF-8 bytes), rank (u8), dims (u32 each), and
the float64 little-endian payload; a CRC32 of everything before it closes
the file. Loading verifies magic, version, and checksum before any tensor
is returned, so a truncated or corrupted file never yields a partial set.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

MAGIC = b"MGHL"
VERSION = 1


class CheckpointError(Exception):
    """Unreadable, corrupt, or version-incompatible checkpoint file."""


def _params_of(source):
    if hasattr(source, "snapshot"):
        return source.snapshot()
    return {name: np.asarray(data) for name, data in source.items()}


def serialize_params(params):
    """Encode a name -> array mapping into checkpoint bytes."""
    chunks = [MAGIC, struct.pack("<H", VERSION),
              struct.pack("<I", len(params))]
    for name in sorted(params):
        # note: np.ascontiguousarray would silently promote 0-d to 1-d
        data = np.asarray(params[name], dtype="<f8", order="C")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body))


def deserialize_params(blob):
    """Decode checkpoint bytes into a name -> float64 array mapping."""
    if len(blob) < len(MAGIC) + 2 + 4 + 4:
        raise CheckpointError("checkpoint file is too short to be valid")
    if blob[:4] != MAGIC:
        raise CheckpointError(
            f"bad magic {blob[:4]!r}; not a parameter checkpoint")
    version = struct.unpack_from("<H", blob, 4)[0]
    if version != VERSION:
        raise CheckpointError(
            f"checkpoint version mismatch: file has {version}, "
            f"this reader supports {VERSION}")
    body, stored_crc = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) != stored_crc:
        raise CheckpointError("checksum mismatch: checkpoint is corrupt "
                              "or truncated")
    count = struct.unpack_from("<I", blob, 6)[0]
    offset = 10
    params = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(body, dtype="<f8", count=n, offset=offset)
            offset += 8 * n
            params[name] = data.reshape(dims).astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint structure: {exc}") from exc
    if offset != len(body):
        raise CheckpointError("trailing bytes after the last tensor")
    return params


def save_checkpoint(store, path):
    """Write every parameter tensor of a store (or a plain name -> array
    mapping) to a checkpoint file."""
    blob = serialize_params(_params_of(store))
    with open(path, "wb") as fh:
        fh.write(blob)
    return path


def load_checkpoint(path):
    """Read a checkpoint back into a parameter store."""
    from .store import SharedParamStore

    with open(path, "rb") as fh:
        blob = fh.read()
    return SharedParamStore(deserialize_params(blob))
