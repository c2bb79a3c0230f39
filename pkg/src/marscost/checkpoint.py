"""Binary model checkpoints: versioned header plus named float64 tensors.

Layout (all integers little-endian):
  magic   8 bytes  b"MCCKPT\\x01\\x00"
  count   uint32   number of tensors
  per tensor:
    name_len uint16, name utf-8, ndim uint8, dims uint32 each,
    data row-major float64 little-endian

Tensor data round-trips bit-exactly.
"""

import struct
from pathlib import Path

import numpy as np

from .io import atomic_write_bytes
from .net import ModelParams
from .types import FormatError

MAGIC = b"MCCKPT\x01\x00"
_MAX_POINTS_KEY = "max_points_per_pillar"


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    name_b = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    head = struct.pack("<H", len(name_b)) + name_b + struct.pack("<B", arr.ndim)
    head += b"".join(struct.pack("<I", d) for d in arr.shape)
    return head + arr.astype("<f8").tobytes()


def save_checkpoint(params: ModelParams, path):
    tensors = params.named_tensors() + [
        (_MAX_POINTS_KEY, np.array(float(params.max_points_per_pillar)))
    ]
    blob = MAGIC + struct.pack("<I", len(tensors))
    for name, arr in tensors:
        blob += _pack_tensor(name, arr)
    atomic_write_bytes(path, blob)


def load_checkpoint(path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a model checkpoint (bad magic)")
    off = len(MAGIC)
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off) if ndim else ()
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data[off : off + 8 * n], dtype="<f8").reshape(shape).copy()
        if arr.size != n:
            raise FormatError(f"{path}: truncated tensor {name!r}")
        off += 8 * n
        tensors[name] = arr
    max_points = int(np.asarray(tensors.pop(_MAX_POINTS_KEY, 32.0)).reshape(-1)[0])
    return ModelParams.from_named(tensors, max_points_per_pillar=max_points)
