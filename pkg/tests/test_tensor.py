import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ternlac.errors import CorruptionError, DomainError, ShapeError
from ternlac.tensor import (
    FP16SIM,
    DensityStats,
    Tensor,
    TernaryTensor,
    density,
    matmul,
    pack_ternary,
    ternary_matmul,
    unpack_ternary,
)


def test_tensor_rejects_bad_rank_and_dtype():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 1, 1, 1, 1)))
    with pytest.raises(DomainError):
        Tensor(np.zeros(3), "int8")


def test_fp16sim_tensor_requires_representable_values():
    Tensor(np.array([1.0, 0.5, 65504.0]), FP16SIM)
    with pytest.raises(DomainError, match="element 1"):
        Tensor(np.array([1.0, 0.1]), FP16SIM)
    assert Tensor.fp16([0.1]).data[0] == np.float32(np.float16(0.1))


def test_tensor_is_read_only():
    t = Tensor(np.ones(3))
    with pytest.raises(ValueError):
        t.data[0] = 2


def test_pack_known_bytes():
    assert pack_ternary([0, 1, -1, 0]).codes == bytes([0x24])
    assert pack_ternary([1] * 8).codes == bytes([0x55, 0x55])
    assert pack_ternary([-1, 1]).codes == bytes([0b0110])


def test_pack_rejects_non_ternary_with_index():
    with pytest.raises(DomainError, match="element 2"):
        pack_ternary([1, 0, 0.5])


def test_reserved_code_rejected_with_byte_offset():
    with pytest.raises(CorruptionError, match="byte offset 1"):
        TernaryTensor((8,), bytes([0x00, 0b1100]))


def test_nonzero_trailing_bits_rejected():
    with pytest.raises(CorruptionError):
        TernaryTensor((3,), bytes([0b01000000]))


def test_code_length_must_match_shape():
    with pytest.raises(CorruptionError):
        TernaryTensor((5,), bytes([0]))


ternary_arrays = hnp.arrays(
    np.int8,
    hnp.array_shapes(min_dims=1, max_dims=4, min_side=1, max_side=16).filter(lambda s: np.prod(s) <= 4096),
    elements=st.sampled_from([-1, 0, 1]),
)


@given(ternary_arrays)
def test_pack_unpack_identity(arr):
    t = pack_ternary(arr)
    assert len(t.codes) == -(-arr.size // 4)
    assert np.array_equal(unpack_ternary(t).data, arr.astype(np.float32))
    assert tuple(t.shape) == arr.shape


@given(st.data())
def test_ternary_matmul_equals_dense(data):
    m, k, n = (data.draw(st.integers(1, 8)) for _ in range(3))
    a = data.draw(hnp.arrays(np.float32, (m, k), elements=st.floats(-8, 8, width=32)))
    w = data.draw(hnp.arrays(np.int8, (k, n), elements=st.sampled_from([-1, 0, 1])))
    tw = pack_ternary(w)
    ta = Tensor(a)
    assert ternary_matmul(ta, tw) == matmul(ta, unpack_ternary(tw))


def test_ternary_matmul_equals_dense_fp16sim():
    rng = np.random.default_rng(3)
    for _ in range(200):
        m, k, n = rng.integers(1, 10, 3)
        a = Tensor.fp16(rng.uniform(-8, 8, (m, k)))
        w = pack_ternary(rng.integers(-1, 2, (k, n)))
        dense = Tensor.fp16(unpack_ternary(w).data)
        assert ternary_matmul(a, w) == matmul(a, dense)


def test_fp16sim_matmul_error_is_bounded():
    rng = np.random.default_rng(11)
    u = 2.0**-11
    for _ in range(50):
        k = int(rng.integers(1, 65))
        a = Tensor.fp16(rng.uniform(-8, 8, (4, k)))
        b = Tensor.fp16(rng.uniform(-8, 8, (k, 5)))
        exact = a.data.astype(np.float64) @ b.data.astype(np.float64)
        half = matmul(a, b).data
        bound = (k + 1) * u * (np.abs(a.data).astype(np.float64) @ np.abs(b.data)) + 2.0**-24 * k
        assert np.all(np.abs(half - exact) <= bound)
        assert half.dtype == np.float32


def test_matmul_shape_and_dtype_errors():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        matmul(Tensor.fp16(np.ones((2, 2))), Tensor(np.ones((2, 2))))


def test_density_examples():
    assert density(Tensor(np.array([0, 1, 0, 2]))).density == 0.5
    assert density(Tensor(np.zeros(4))).density == 0.0
    assert density(Tensor(np.array([1e-9, 1.0])), eps=1e-6).density == 0.5
    assert DensityStats(0, 0).density == 0.0
    with pytest.raises(DomainError):
        density(Tensor(np.ones(2)), eps=-1)
