"""Named-tensor checkpoint archive.

Layout: magic ``MCLCKPT1``, u32 format version, u32 tensor count, then per
tensor (u16 name length, UTF-8 name, u32 rank, u32 dims, raw little-endian
float32 data), then a u32-length-prefixed JSON trailer holding the resolved
config snapshot and the run seed. All integers little-endian. Save -> load
-> save is byte-identical.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation, FormatError

MAGIC = b"MCLCKPT1"
VERSION = 1


@dataclass
class Checkpoint:
    tensors: dict  # name -> float32 ndarray, insertion-ordered
    config: dict
    seed: int

    def save(self, path) -> str:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        chunks = [MAGIC, struct.pack("<II", VERSION, len(self.tensors))]
        for name, arr in self.tensors.items():
            arr = np.asarray(arr)
            if arr.dtype != np.float32:
                raise ContractViolation(f"checkpoint tensor {name} must be float32, got {arr.dtype}")
            encoded = name.encode("utf-8")
            chunks.append(struct.pack("<H", len(encoded)))
            chunks.append(encoded)
            chunks.append(struct.pack("<I", arr.ndim))
            chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            chunks.append(arr.astype("<f4").tobytes())
        trailer = json.dumps({"config": self.config, "seed": self.seed},
                             sort_keys=True, separators=(",", ":")).encode("utf-8")
        chunks.append(struct.pack("<I", len(trailer)))
        chunks.append(trailer)
        path.write_bytes(b"".join(chunks))
        return str(path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        blob = path.read_bytes()
        if blob[:8] != MAGIC:
            raise FormatError(f"{path}: bad checkpoint magic {blob[:8]!r} (expected {MAGIC!r})")
        off = 8
        try:
            version, count = struct.unpack_from("<II", blob, off)
            off += 8
            if version != VERSION:
                raise FormatError(f"{path}: unsupported checkpoint version {version}")
            tensors = {}
            for _ in range(count):
                (nlen,) = struct.unpack_from("<H", blob, off)
                off += 2
                name = blob[off : off + nlen].decode("utf-8")
                off += nlen
                (rank,) = struct.unpack_from("<I", blob, off)
                off += 4
                dims = struct.unpack_from(f"<{rank}I", blob, off)
                off += 4 * rank
                n_bytes = int(np.prod(dims)) * 4 if rank else 4
                arr = np.frombuffer(blob[off : off + n_bytes], dtype="<f4").reshape(dims)
                if arr.size != int(np.prod(dims)):
                    raise FormatError(f"{path}: truncated tensor {name} at byte offset {off}")
                off += n_bytes
                tensors[name] = arr.copy()
            (tlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            trailer = json.loads(blob[off : off + tlen].decode("utf-8"))
        except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError(f"{path}: malformed checkpoint ({e})") from None
        return cls(tensors, trailer["config"], int(trailer["seed"]))
