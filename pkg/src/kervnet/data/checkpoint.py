"""Binary model checkpoints.

Layout (all integers little-endian)::

    magic      8 bytes   b"KERVNET\\0"
    version    u32       FORMAT_VERSION
    blob_len   u64       length of the JSON blob
    blob       bytes     canonical JSON {"spec": ModelSpec, "extra": {...}}
    n_tensors  u32
    per tensor:
      name_len u16, name (utf-8), ndim u8, dims u64 * ndim, data float64 * prod(dims)
    checksum   u64       blake2b-64 of every preceding byte

Tensors are the model's ``state_dict`` entries (parameters, then buffers) in
order, so saving the same model twice produces byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

from ..errors import ChecksumError, TruncatedFileError, UnsupportedVersionError
from ..models import Model, ModelSpec, instantiate

MAGIC = b"KERVNET\x00"
FORMAT_VERSION = 1


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def encode_checkpoint(model: Model, extra: dict | None = None) -> bytes:
    blob = json.dumps({"spec": model.spec.to_dict(), "extra": extra or {}},
                      sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(blob)), blob]
    state = model.state_dict()
    parts.append(struct.pack("<I", len(state)))
    for name, value in state.items():
        key = name.encode()
        parts.append(struct.pack("<H", len(key)) + key + struct.pack("<B", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    payload = b"".join(parts)
    return payload + _checksum(payload)


def save_checkpoint(model: Model, path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(model, extra))
    return path


class _Reader:
    def __init__(self, data: bytes, end: int):
        self.data, self.pos, self.end = data, 0, end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedFileError(f"checkpoint truncated: need {n} bytes at offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> tuple[ModelSpec, dict, dict]:
    """Parse bytes into ``(spec, state, extra)`` with structural and checksum validation."""
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC[: len(data)]:
        raise ChecksumError("not a kervnet checkpoint (bad magic)")
    reader = _Reader(data, max(len(data) - 8, 0))
    reader.take(len(MAGIC))
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"checkpoint format version {version} is not supported")
    (blob_len,) = reader.unpack("<Q")
    blob = reader.take(blob_len)
    (count,) = reader.unpack("<I")
    raw_tensors = []
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len)
        (ndim,) = reader.unpack("<B")
        dims = reader.unpack(f"<{ndim}Q")
        raw_tensors.append((name, dims, reader.take(8 * math.prod(dims))))
    if reader.pos != reader.end:
        raise ChecksumError("trailing bytes after tensor payload")
    if len(data) < reader.end + 8:
        raise TruncatedFileError("checkpoint truncated: checksum missing")
    if _checksum(data[: reader.end]) != data[reader.end :]:
        raise ChecksumError("checkpoint checksum mismatch")
    meta = json.loads(blob.decode())
    state = {name.decode(): np.frombuffer(buf, dtype="<f8").reshape(dims).astype(np.float64)
             for name, dims, buf in raw_tensors}
    return ModelSpec.from_dict(meta["spec"]), state, meta.get("extra", {})


def load_checkpoint(path) -> Model:
    """Rebuild the model; checkpoint metadata is attached as ``model.extra``."""
    spec, state, extra = decode_checkpoint(Path(path).read_bytes())
    model = instantiate(spec, 0)
    model.load_state_dict(state)
    model.extra = extra
    return model
