"""Binary tensor files.

TNSR::

    b"TNSR" | version u8 = 1 | dtype u8 (0 fp32, 1 fp16sim) | rank u8
    | rank x u32 LE dims | prod(dims) x f32 LE

TERN::

    b"TERN" | version u8 = 1 | rank u8 | rank x u32 LE dims | ceil(n/4) packed code bytes
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import FP16SIM, FP32, Tensor, TernaryTensor

TNSR_MAGIC = b"TNSR"
TERN_MAGIC = b"TERN"
VERSION = 1
_DTYPE_CODES = {FP32: 0, FP16SIM: 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def atomic_write(path, payload: bytes | str):
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensor(t: Tensor) -> bytes:
    head = TNSR_MAGIC + struct.pack("<BBB", VERSION, _DTYPE_CODES[t.dtype], len(t.shape))
    dims = struct.pack(f"<{len(t.shape)}I", *t.shape)
    return head + dims + t.data.astype("<f4").tobytes()


def encode_ternary(t: TernaryTensor) -> bytes:
    head = TERN_MAGIC + struct.pack("<BB", VERSION, len(t.shape))
    return head + struct.pack(f"<{len(t.shape)}I", *t.shape) + t.codes


def _read_dims(buf: bytes, offset: int, rank: int, what: str):
    end = offset + 4 * rank
    if len(buf) < end:
        raise FormatError(f"{what}: truncated header")
    return struct.unpack_from(f"<{rank}I", buf, offset), end


def decode_tensor(buf: bytes, what: str = "TNSR") -> Tensor:
    if buf[:4] != TNSR_MAGIC:
        raise FormatError(f"{what}: bad magic {buf[:4]!r}")
    if len(buf) < 7:
        raise FormatError(f"{what}: truncated header")
    version, dcode, rank = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise FormatError(f"{what}: unsupported version {version}")
    if dcode not in _CODE_DTYPES:
        raise FormatError(f"{what}: unknown dtype code {dcode}")
    if not 1 <= rank <= 4:
        raise FormatError(f"{what}: rank {rank} out of range")
    dims, off = _read_dims(buf, 7, rank, what)
    n = math.prod(dims)
    if len(buf) != off + 4 * n:
        raise FormatError(f"{what}: payload is {len(buf) - off} bytes, expected {4 * n}")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(dims)
    return Tensor(data, _CODE_DTYPES[dcode])


def decode_ternary(buf: bytes, what: str = "TERN") -> TernaryTensor:
    if buf[:4] != TERN_MAGIC:
        raise FormatError(f"{what}: bad magic {buf[:4]!r}")
    if len(buf) < 6:
        raise FormatError(f"{what}: truncated header")
    version, rank = struct.unpack_from("<BB", buf, 4)
    if version != VERSION:
        raise FormatError(f"{what}: unsupported version {version}")
    if not 1 <= rank <= 4:
        raise FormatError(f"{what}: rank {rank} out of range")
    dims, off = _read_dims(buf, 6, rank, what)
    return TernaryTensor(tuple(dims), buf[off:])


def save_tensor(path, t: Tensor):
    atomic_write(path, encode_tensor(t))


def save_ternary(path, t: TernaryTensor):
    atomic_write(path, encode_ternary(t))


def load_tensor(path) -> Tensor:
    return decode_tensor(Path(path).read_bytes(), str(path))


def load_ternary(path) -> TernaryTensor:
    return decode_ternary(Path(path).read_bytes(), str(path))


def load_any(path) -> Tensor | TernaryTensor:
    """Dispatch on the magic bytes."""
    buf = Path(path).read_bytes()
    if buf[:4] == TERN_MAGIC:
        return decode_ternary(buf, str(path))
    return decode_tensor(buf, str(path))


def save_any(path, t: Tensor | TernaryTensor):
    if isinstance(t, TernaryTensor):
        save_ternary(path, t)
    else:
        save_tensor(path, t)
