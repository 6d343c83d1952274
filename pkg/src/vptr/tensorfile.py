"""Bit-exact binary tensor container (``.vtn`` files).

Layout, all little-endian, no padding:

====== ======= =======================================
offset size    field
====== ======= =======================================
0      4       magic ``b"VPTR"``
4      1       format version (currently 1)
5      1       rank (number of dimensions, >= 1)
6      4*rank  dims, u32 each
...    1       dtype code (0 = float32 little-endian)
...    payload row-major values, prod(dims) * 4 bytes
====== ======= =======================================

Round trips are bit-exact for every finite float32 payload, including
negative zero and denormals.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from .errors import TensorFileError

MAGIC = b"VPTR"
VERSION = 1
DTYPE_F32 = 0
EXTENSION = ".vtn"

_MAX_RANK = 32


def save_tensor(path: str | Path, x: Tensor | np.ndarray) -> None:
    """Write a float32 tensor to ``path`` in the container format above."""
    if isinstance(x, Tensor):
        arr = x.detach().cpu().numpy()
    else:
        arr = np.asarray(x)
    if arr.dtype != np.float32:
        raise TensorFileError(f"only float32 payloads are persisted, got dtype {arr.dtype}")
    if arr.ndim < 1:
        arr = arr.reshape(1)
    if arr.ndim > _MAX_RANK:
        raise TensorFileError(f"rank {arr.ndim} exceeds maximum {_MAX_RANK}")
    for dim in arr.shape:
        if dim > 0xFFFFFFFF:
            raise TensorFileError(f"dimension {dim} does not fit in u32")
    header = MAGIC + struct.pack("<BB", VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    header += struct.pack("<B", DTYPE_F32)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def load_tensor(path: str | Path) -> Tensor:
    """Read a ``.vtn`` file back into a float32 tensor, bit-identical to what was saved."""
    raw = Path(path).read_bytes()
    if len(raw) < 6:
        raise TensorFileError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise TensorFileError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version, rank = struct.unpack_from("<BB", raw, 4)
    if version != VERSION:
        raise TensorFileError(f"{path}: unsupported version {version}")
    if rank < 1 or rank > _MAX_RANK:
        raise TensorFileError(f"{path}: unsupported rank {rank}")
    offset = 6
    if len(raw) < offset + 4 * rank + 1:
        raise TensorFileError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{rank}I", raw, offset)
    offset += 4 * rank
    (dtype_code,) = struct.unpack_from("<B", raw, offset)
    offset += 1
    if dtype_code != DTYPE_F32:
        raise TensorFileError(f"{path}: unsupported dtype code {dtype_code}")
    count = 1
    for dim in dims:
        count *= dim
    expected = count * 4
    if len(raw) - offset != expected:
        raise TensorFileError(
            f"{path}: payload is {len(raw) - offset} bytes, expected {expected} for dims {dims}"
        )
    arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(dims)
    return torch.from_numpy(arr.copy())
