import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ternlac.half import f16_to_f32, f16_to_f32_array, f32_to_f16, f32_to_f16_array, round_f16


@pytest.mark.parametrize("x,bits", [
    (0.0, 0x0000),
    (-0.0, 0x8000),
    (1.0, 0x3C00),
    (-2.0, 0xC000),
    (65504.0, 0x7BFF),       # largest finite
    (65520.0, 0x7C00),       # halfway to the next binade rounds up to inf
    (2.0**-24, 0x0001),      # smallest subnormal
    (2.0**-25, 0x0000),      # tie with zero rounds to even (zero)
    (3 * 2.0**-25, 0x0002),  # tie between 1 and 2 subnormal ulps goes to even
    (2.0**-14, 0x0400),      # smallest normal
    (1.0 + 2.0**-11, 0x3C00),  # tie rounds to even mantissa
    (1.0 + 3 * 2.0**-11, 0x3C02),
    (math.inf, 0x7C00),
    (-math.inf, 0xFC00),
])
def test_known_encodings(x, bits):
    assert f32_to_f16(x) == bits


def test_nan_stays_nan():
    h = f32_to_f16(float("nan"))
    assert (h & 0x7C00) == 0x7C00 and (h & 0x03FF) != 0
    assert math.isnan(f16_to_f32(h))


def test_every_half_pattern_decodes_like_numpy():
    bits = np.arange(65536, dtype=np.uint16)
    ours = f16_to_f32_array(bits)
    ref = bits.view(np.float16).astype(np.float32)
    assert np.array_equal(ours, ref, equal_nan=True)


def test_random_float32_patterns_encode_like_numpy():
    rng = np.random.default_rng(7)
    raw = rng.integers(0, 2**32, size=500_000, dtype=np.uint64).astype(np.uint32)
    x = raw.view(np.float32)
    ours = f32_to_f16_array(x)
    with np.errstate(over="ignore", invalid="ignore"):
        ref = x.astype(np.float16).view(np.uint16)
    finite = ~np.isnan(x)
    assert np.array_equal(ours[finite], ref[finite])
    assert np.all((ours[~finite] & 0x7C00) == 0x7C00)


@given(st.floats(width=32, allow_nan=False))
def test_round_is_idempotent(x):
    once = round_f16(np.float32(x))
    assert np.array_equal(round_f16(once), once)


@given(st.floats(min_value=-60000, max_value=60000, width=32))
def test_round_error_within_half_ulp(x):
    r = float(round_f16(np.float32(x)))
    if abs(x) >= 2.0**-14:
        assert abs(r - x) <= abs(x) * 2.0**-11
    else:
        assert abs(r - x) <= 2.0**-25
