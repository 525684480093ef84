"""Dense tensors, packed 2-bit ternary tensors and density statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import CorruptionError, DomainError, ShapeError
from .half import round_f16

FP32 = "fp32"
FP16SIM = "fp16sim"
DTYPES = (FP32, FP16SIM)

# 2-bit codes, little-endian within a byte: element e sits at bits 2*(e % 4).
CODE_ZERO, CODE_POS, CODE_NEG, CODE_RESERVED = 0b00, 0b01, 0b10, 0b11
_CODE_TO_VALUE = np.array([0, 1, -1, 0], dtype=np.int8)
# byte -> its four 2-bit fields, lowest bits first
_BYTE_FIELDS = ((np.arange(256, dtype=np.uint8)[:, None] >> np.array([0, 2, 4, 6], np.uint8)) & 0b11)


@dataclass(frozen=True, eq=False)
class Tensor:
    """Row-major float32 array tagged with a datapath dtype.

    ``fp16sim`` tensors hold float32 values that are exactly representable
    in binary16.
    """

    data: np.ndarray
    dtype: str = FP32

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise DomainError(f"unknown dtype {self.dtype!r}; expected one of {DTYPES}")
        arr = np.array(self.data, dtype=np.float32, order="C", copy=True)
        if not 1 <= arr.ndim <= 4:
            raise ShapeError(f"tensor rank must be 1..4, got shape {arr.shape}")
        if self.dtype == FP16SIM:
            rounded = round_f16(arr)
            ok = (rounded == arr) | (np.isnan(rounded) & np.isnan(arr))
            if not ok.all():
                idx = int(np.flatnonzero(~ok.ravel())[0])
                raise DomainError(f"element {idx} ({arr.ravel()[idx]!r}) is not a binary16 value")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def fp16(cls, values) -> "Tensor":
        """Round ``values`` to binary16 and tag the result fp16sim."""
        return cls(round_f16(np.asarray(values, dtype=np.float32)), FP16SIM)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def reshape(self, *shape) -> "Tensor":
        return Tensor(self.data.reshape(*shape), self.dtype)

    def tolist(self):
        return self.data.tolist()

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.dtype == other.dtype
            and self.shape == other.shape
            and np.array_equal(self.data, other.data, equal_nan=True)
        )

    def __repr__(self):
        return f"Tensor(shape={list(self.shape)}, dtype={self.dtype})"


def _decode_codes(codes: bytes, n: int) -> np.ndarray:
    raw = np.frombuffer(codes, dtype=np.uint8)
    fields = _BYTE_FIELDS[raw].ravel()
    used = fields[:n]
    bad = np.flatnonzero(used == CODE_RESERVED)
    if bad.size:
        e = int(bad[0])
        raise CorruptionError(f"reserved code 0b11 at element {e} (byte offset {e // 4})")
    stray = np.flatnonzero(fields[n:])
    if stray.size:
        raise CorruptionError(
            f"nonzero trailing bits in final byte (byte offset {(n + int(stray[0])) // 4})"
        )
    return _CODE_TO_VALUE[used]


@dataclass(frozen=True, eq=False)
class TernaryTensor:
    """Weights over {-1, 0, +1} packed four to a byte.

    Codes: 00 -> 0, 01 -> +1, 10 -> -1; 11 is reserved and rejected.
    """

    shape: tuple[int, ...]
    codes: bytes

    def __post_init__(self):
        shape = tuple(int(d) for d in self.shape)
        if any(d < 0 for d in shape) or not 1 <= len(shape) <= 4:
            raise ShapeError(f"invalid ternary shape {list(shape)}")
        n = math.prod(shape)
        codes = bytes(self.codes)
        if len(codes) != (n + 3) // 4:
            raise CorruptionError(
                f"{len(codes)} code bytes for {n} elements; expected {(n + 3) // 4}"
            )
        values = _decode_codes(codes, n).reshape(shape)
        values.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "codes", codes)
        # cached_property slot; filled eagerly since decoding doubles as validation
        self.__dict__["values"] = values

    @cached_property
    def values(self) -> np.ndarray:
        """Decoded int8 array of -1/0/+1 with ``shape``."""
        return _decode_codes(self.codes, self.size).reshape(self.shape)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def nbytes(self) -> int:
        return len(self.codes)

    def to_tensor(self) -> Tensor:
        return Tensor(self.values.astype(np.float32))

    def __eq__(self, other):
        if not isinstance(other, TernaryTensor):
            return NotImplemented
        return self.shape == other.shape and self.codes == other.codes

    def __neg__(self) -> "TernaryTensor":
        return pack_ternary(-self.values.astype(np.float32))

    def __repr__(self):
        return f"TernaryTensor(shape={list(self.shape)}, nbytes={self.nbytes})"


@dataclass(frozen=True)
class DensityStats:
    """Nonzero count over a population of elements or operand pairs."""

    total: int
    nonzero: int

    def __post_init__(self):
        if not 0 <= self.nonzero <= self.total:
            raise ValueError(f"need 0 <= nonzero <= total, got {self.nonzero}/{self.total}")

    @property
    def density(self) -> float:
        return self.nonzero / self.total if self.total else 0.0

    def __add__(self, other: "DensityStats") -> "DensityStats":
        return DensityStats(self.total + other.total, self.nonzero + other.nonzero)


def _pack_codes(values: np.ndarray, shape) -> TernaryTensor:
    """Pack an integer array already known to hold only -1, 0 and +1."""
    codes = np.where(values > 0, CODE_POS, np.where(values < 0, CODE_NEG, CODE_ZERO)).astype(np.uint8).ravel()
    pad = (-codes.size) % 4
    if pad:
        codes = np.concatenate([codes, np.zeros(pad, np.uint8)])
    quads = codes.reshape(-1, 4)
    packed = quads[:, 0] | (quads[:, 1] << 2) | (quads[:, 2] << 4) | (quads[:, 3] << 6)
    return TernaryTensor(shape, packed.tobytes())


def pack_ternary(values) -> TernaryTensor:
    """Pack a tensor whose elements are exactly -1, 0 or +1."""
    arr = values.data if isinstance(values, Tensor) else np.asarray(values, dtype=np.float32)
    flat = arr.ravel()
    bad = np.flatnonzero((flat != 0) & (flat != 1) & (flat != -1))
    if bad.size:
        i = int(bad[0])
        raise DomainError(f"element {i} = {flat[i]!r} is not ternary")
    return _pack_codes(flat, arr.shape if arr.ndim else (1,))


def unpack_ternary(t: TernaryTensor) -> Tensor:
    return t.to_tensor()


def _check_mm(a_shape: Sequence[int], b_shape: Sequence[int]):
    if len(a_shape) != 2 or len(b_shape) != 2 or a_shape[1] != b_shape[0]:
        raise ShapeError(f"cannot multiply {list(a_shape)} by {list(b_shape)}")


def mm_ordered(a: np.ndarray, b: np.ndarray, fp16: bool = False) -> np.ndarray:
    """Reference product that accumulates over k in ascending order.

    With ``fp16`` every product and every running sum is rounded to binary16;
    arithmetic is carried in float64, where both are exact before rounding.
    """
    M, K = a.shape
    N = b.shape[1]
    work = np.float64 if fp16 else np.result_type(a.dtype, b.dtype, np.float32)
    a = a.astype(work, copy=False)
    b = b.astype(work, copy=False)
    acc = np.zeros((M, N), dtype=work)
    for k in range(K):
        prod = np.multiply.outer(a[:, k], b[k])
        if fp16:
            acc = round_f16(acc + round_f16(prod, np.float64), np.float64)
        else:
            acc += prod
    return acc


def ternary_mm_ordered(a: np.ndarray, w: np.ndarray, fp16: bool = False) -> np.ndarray:
    """Same contract as :func:`mm_ordered` with ``w`` over {-1, 0, +1}.

    Multiplies become add, subtract or skip.
    """
    M, K = a.shape
    N = w.shape[1]
    work = np.float64 if fp16 else np.result_type(a.dtype, np.float32)
    a = a.astype(work, copy=False)
    acc = np.zeros((M, N), dtype=work)
    for k in range(K):
        col = a[:, k : k + 1]
        pos = w[k] > 0
        neg = w[k] < 0
        if pos.any():
            acc[:, pos] += col
        if neg.any():
            acc[:, neg] -= col
        if fp16:
            acc = round_f16(acc, np.float64)
    return acc


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Row-major product. fp16sim operands model a 16-bit datapath."""
    _check_mm(a.shape, b.shape)
    if a.dtype != b.dtype:
        raise ShapeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    out = mm_ordered(a.data, b.data, fp16=a.dtype == FP16SIM)
    return Tensor(out.astype(np.float32), a.dtype)


def ternary_matmul(a: Tensor, w: TernaryTensor) -> Tensor:
    """``a @ w`` without multiplies; equals ``matmul(a, unpack(w))`` exactly."""
    _check_mm(a.shape, w.shape)
    out = ternary_mm_ordered(a.data, w.values, fp16=a.dtype == FP16SIM)
    return Tensor(out.astype(np.float32), a.dtype)


def density(t, eps: float = 0.0) -> DensityStats:
    """Count elements with ``|x| > eps``."""
    if eps < 0:
        raise DomainError(f"eps must be non-negative, got {eps}")
    arr = t.values if isinstance(t, TernaryTensor) else getattr(t, "data", t)
    arr = np.asarray(arr)
    return DensityStats(int(arr.size), int(np.count_nonzero(np.abs(arr) > eps)))
