"""IEEE 754 binary16 conversion with round-to-nearest-even.

The rounding is done directly on float64 bit patterns so that callers can
round exact float64 intermediates (sums and products of binary16 values are
exact in float64) with a single rounding step.

binary16 layout: 1 sign bit, 5 exponent bits (bias 15), 10 fraction bits.
Largest finite value 65504, smallest normal 2**-14, smallest subnormal 2**-24.
"""

from __future__ import annotations

import numpy as np

_F64_FRAC_BITS = 52
_F16_FRAC_BITS = 10
_F16_INF = 0x7C00
_F16_QNAN = 0x7E00

_U1 = np.uint64(1)


def _f64_to_f16_bits(x: np.ndarray) -> np.ndarray:
    bits = np.ascontiguousarray(x, dtype=np.float64).view(np.uint64)
    sign = ((bits >> np.uint64(63)) << np.uint64(15)).astype(np.uint16)
    exp = ((bits >> np.uint64(_F64_FRAC_BITS)) & np.uint64(0x7FF)).astype(np.int64)
    frac = bits & np.uint64((1 << _F64_FRAC_BITS) - 1)

    sig = frac | np.uint64(1 << _F64_FRAC_BITS)
    e = exp - 1023
    # Normal halves keep 10 fraction bits; below 2**-14 the quantum is fixed at 2**-24.
    shift = (_F64_FRAC_BITS - _F16_FRAC_BITS) + np.maximum(-14 - e, 0)
    shift = np.minimum(shift, 63).astype(np.uint64)

    q = sig >> shift
    rem = sig & ((_U1 << shift) - _U1)
    halfway = _U1 << (shift - _U1)
    round_up = (rem > halfway) | ((rem == halfway) & ((q & _U1) == _U1))
    q = q + round_up.astype(np.uint64)

    normal = e >= -14
    # (e + 14) << 10 plus a 11-bit q lets a rounding carry bump the exponent.
    biased = np.where(normal, (np.maximum(e, -14) + 14) << _F16_FRAC_BITS, 0).astype(np.int64)
    mag = biased + q.astype(np.int64)
    mag = np.where(mag >= _F16_INF, _F16_INF, mag)

    mag = np.where(exp == 0, 0, mag)  # float64 zeros and subnormals underflow
    is_inf = (exp == 0x7FF) & (frac == 0)
    is_nan = (exp == 0x7FF) & (frac != 0)
    mag = np.where(is_inf, _F16_INF, mag)
    mag = np.where(is_nan, _F16_QNAN, mag)
    return sign | mag.astype(np.uint16)


def _f16_bits_to_f64(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.uint16).astype(np.int64)
    sign = np.where(h & 0x8000, -1.0, 1.0)
    exp = (h >> _F16_FRAC_BITS) & 0x1F
    frac = (h & 0x3FF).astype(np.float64)
    sub = np.ldexp(frac, -24)
    norm = np.ldexp(1024.0 + frac, exp - 25)
    mag = np.where(exp == 0, sub, norm)
    special = np.where(frac == 0, np.inf, np.nan)
    mag = np.where(exp == 0x1F, special, mag)
    return sign * mag


def f32_to_f16_array(x) -> np.ndarray:
    """Vectorised float32 -> binary16 bit patterns (uint16)."""
    with np.errstate(invalid="ignore"):  # signalling NaNs quieten on widening
        wide = np.asarray(x, dtype=np.float32).astype(np.float64)
    return _f64_to_f16_bits(wide)


def f16_to_f32_array(h) -> np.ndarray:
    return _f16_bits_to_f64(h).astype(np.float32)


def f32_to_f16(x: float) -> int:
    """Round a single-precision value to the nearest binary16 bit pattern."""
    return int(f32_to_f16_array(np.float32(x)).reshape(()))


def f16_to_f32(bits: int) -> float:
    if not 0 <= bits <= 0xFFFF:
        raise ValueError(f"not a 16-bit pattern: {bits!r}")
    return float(_f16_bits_to_f64(np.uint16(bits)).reshape(()))


def round_f16(x, dtype=np.float32) -> np.ndarray:
    """Round every element to the nearest binary16 value, returned as ``dtype``.

    Accepts float32 or float64 input; float64 input is rounded once, which
    is what the fp16 datapath model relies on.
    """
    x = np.asarray(x)
    bits = _f64_to_f16_bits(x.astype(np.float64)).reshape(x.shape)
    return _f16_bits_to_f64(bits).astype(dtype)
