"""Single-file versioned checkpoint container.

Layout::

    magic (8 bytes) | version (u32 LE) | header length (u64 LE) | header JSON
    | raw little-endian tensor bytes | sha256 of everything before it

The header holds metadata (config, step, epoch, seeds) and a tensor table
with dtype, shape and byte offset. Serialization is deterministic, so
save -> load -> save reproduces the same bytes.
"""
import contextlib
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, CheckpointVersionError

MAGIC = b"SHFTMEM\x00"
FORMAT_VERSION = 1
_DTYPES = {"float32", "float64", "int64", "uint8"}


@dataclass(eq=False)
class Checkpoint:
    tensors: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_bytes(self):
        table = []
        chunks = []
        offset = 0
        for name, arr in self.tensors.items():
            arr = np.asarray(arr)
            dtype = arr.dtype.name
            if dtype not in _DTYPES:
                raise CheckpointError(f"tensor {name!r}: unsupported dtype {dtype}")
            raw = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
            table.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
        header = json.dumps({"meta": self.meta, "tensors": table}, sort_keys=True, separators=(",", ":"))
        header = header.encode("utf-8")
        body = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header)) + header + b"".join(chunks)
        return body + hashlib.sha256(body).digest()

    @classmethod
    def from_bytes(cls, data, source="<bytes>"):
        if len(data) < len(MAGIC) + 12 + 32 or not data.startswith(MAGIC):
            raise CheckpointError(f"{source}: not a checkpoint file (bad magic or truncated)")
        (version, hlen) = struct.unpack_from("<IQ", data, len(MAGIC))
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(
                f"{source}: checkpoint format version {version} is incompatible with reader version {FORMAT_VERSION}"
            )
        body, digest = data[:-32], data[-32:]
        if hashlib.sha256(body).digest() != digest:
            raise CheckpointError(f"{source}: checksum mismatch (file truncated or corrupted)")
        start = len(MAGIC) + 12
        try:
            header = json.loads(body[start:start + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{source}: unreadable header: {e}") from e
        payload = body[start + hlen:]
        tensors = {}
        for t in header["tensors"]:
            raw = payload[t["offset"]:t["offset"] + t["nbytes"]]
            if len(raw) != t["nbytes"]:
                raise CheckpointError(f"{source}: tensor {t['name']!r} is truncated")
            arr = np.frombuffer(raw, dtype=np.dtype(t["dtype"]).newbyteorder("<")).reshape(t["shape"])
            tensors[t["name"]] = arr.astype(np.dtype(t["dtype"]), copy=True)
        return cls(tensors, header["meta"])


def save_checkpoint(ckpt, path):
    """Write atomically: a failed write never leaves a partial file at ``path``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(ckpt.to_bytes())
        os.replace(tmp, path)
    except OSError as e:
        with contextlib.suppress(OSError):
            tmp.unlink(missing_ok=True)
        raise CheckpointError(f"could not write checkpoint {path}: {e}") from e
    return path


def load_checkpoint(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"could not read checkpoint {path}: {e}") from e
    return Checkpoint.from_bytes(data, source=str(path))
