"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"RFLK"            magic
    u32                format version
    u32 + bytes        UTF-8 JSON header (config snapshot, init metadata)
    u64                iteration counter
    u32                tensor count
    per tensor:
      u16 + bytes      UTF-8 name
      u8               rank
      u32 * rank       dims
      f32 * prod(dims) data, C order
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"RFLK"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: "OrderedDict[str, np.ndarray]"
    config: dict = field(default_factory=dict)
    iteration: int = 0
    meta: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        header = json.dumps({"config": self.config, "meta": self.meta},
                            sort_keys=True).encode("utf-8")
        out = [MAGIC, struct.pack("<II", VERSION, len(header)), header,
               struct.pack("<QI", self.iteration, len(self.tensors))]
        for name, arr in self.tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            out.append(struct.pack("<H", len(raw)) + raw)
            out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.append(arr.tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        view = memoryview(buf)
        pos = 0

        def take(n):
            nonlocal pos
            if pos + n > len(view):
                raise CheckpointError("truncated checkpoint")
            chunk = view[pos:pos + n]
            pos += n
            return chunk

        if bytes(take(4)) != MAGIC:
            raise CheckpointError("bad magic: not a checkpoint file")
        version, hlen = struct.unpack("<II", take(8))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        try:
            header = json.loads(bytes(take(hlen)).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt header: {exc}") from exc
        iteration, count = struct.unpack("<QI", take(12))
        tensors = OrderedDict()
        for _ in range(count):
            (nlen,) = struct.unpack("<H", take(2))
            name = bytes(take(nlen)).decode("utf-8")
            (rank,) = struct.unpack("<B", take(1))
            dims = struct.unpack(f"<{rank}I", take(4 * rank))
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(bytes(take(4 * n)), dtype="<f4").reshape(dims)
            tensors[name] = arr.astype(np.float32)
        if pos != len(view):
            raise CheckpointError("trailing bytes after tensor table")
        return cls(tensors, header.get("config", {}), iteration, header.get("meta", {}))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
