import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ternlac.errors import DomainError, ShapeError
from ternlac.graph import (
    BatchNormInf,
    Conv2d,
    FullyConnected,
    MMRecord,
    NetworkSpec,
    PWRecord,
    ReLUT,
    SoftmaxXent,
    conv2d_direct,
    fold_batchnorm,
    forward,
    im2col,
)
from ternlac.tensor import FP16SIM, Tensor, pack_ternary


def test_im2col_1x1_is_flatten():
    x = Tensor(np.array([[[1, 2], [3, 4]]], dtype=np.float32))
    cols = im2col(x, Conv2d(1, 1, 1, 1))
    assert cols.data.tolist() == [[1, 2, 3, 4]]


def test_im2col_2x2_receptive_fields():
    x = Tensor(np.arange(1, 10, dtype=np.float32).reshape(1, 3, 3))
    cols = im2col(x, Conv2d(1, 1, 2, 2)).data
    assert cols.shape == (4, 4)
    assert cols[:, 0].tolist() == [1, 2, 4, 5]
    assert cols[:, 3].tolist() == [5, 6, 8, 9]


def test_im2col_padding_corner_zeros():
    x = Tensor(np.ones((1, 2, 2), dtype=np.float32))
    cols = im2col(x, Conv2d(1, 1, 3, 3, pad=1)).data
    # output (0, 0): the first row and first column of the patch fall in the padding
    assert cols[:, 0].tolist() == [0, 0, 0, 0, 1, 1, 0, 1, 1]


def test_im2col_kernel_too_large():
    with pytest.raises(ShapeError):
        im2col(Tensor(np.ones((1, 2, 2))), Conv2d(1, 1, 3, 3))


def test_direct_conv_examples():
    x = Tensor(np.array([[[1, 2], [3, 4]]], dtype=np.float32))
    ident = Tensor(np.ones((1, 1, 1, 1)))
    assert conv2d_direct(x, ident, Conv2d(1, 1, 1, 1)) == x
    k = Tensor(np.array([[[[1, 0], [0, 1]]]], dtype=np.float32))
    assert conv2d_direct(x, k, Conv2d(1, 1, 2, 2)).data.tolist() == [[[5.0]]]


@given(st.integers(0, 2**32 - 1))
def test_im2col_path_matches_direct(seed):
    rng = np.random.default_rng(seed)
    C, F = rng.integers(1, 5, 2)
    k = int(rng.integers(1, 4))
    s, p = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    H, W = rng.integers(max(1, k - 2 * p), 7, 2)
    conv = Conv2d(int(C), int(F), k, k, s, p)
    x = Tensor(rng.standard_normal((C, H, W)))
    w = Tensor(rng.standard_normal(conv.weight_shape))
    Ho, Wo = conv.out_hw(H, W)
    lowered = (w.data.reshape(F, -1).astype(np.float64) @ im2col(x, conv).data).reshape(F, Ho, Wo)
    assert np.allclose(lowered, conv2d_direct(x, w, conv).data, atol=1e-5, rtol=0)


def test_fold_batchnorm_examples():
    bn = fold_batchnorm(1, 0, 0, 1, eps=0)
    assert bn.scale == (1.0,) and bn.shift == (0.0,)
    bn = fold_batchnorm(2, 1, 3, 4, eps=0)
    assert bn.scale == (1.0,) and bn.shift == (-2.0,)
    with pytest.raises(DomainError):
        fold_batchnorm(1, 0, 0, -1)


def test_fold_batchnorm_matches_unfolded():
    rng = np.random.default_rng(5)
    g, b, m = rng.normal(size=(3, 6))
    v = rng.uniform(0.1, 2, 6)
    bn = fold_batchnorm(g, b, m, v, eps=1e-5)
    x = rng.normal(size=(10, 6))
    ref = g * (x - m) / np.sqrt(v + 1e-5) + b
    assert np.allclose(np.array(bn.scale) * x + np.array(bn.shift), ref, atol=1e-6)


def test_layer_validation():
    with pytest.raises(DomainError):
        Conv2d(1, 1, 3, 3, stride=0)
    with pytest.raises(DomainError):
        Conv2d(1, 1, 3, 3, pad=-1)
    with pytest.raises(DomainError):
        FullyConnected(2, 2, precision="int4")
    with pytest.raises(DomainError):
        BatchNormInf((1.0,), (0.0, 0.0))


def test_shape_chain_validation():
    ok = NetworkSpec("n", [Conv2d(1, 2, 3, 3), ReLUT(), FullyConnected(2 * 4 * 4, 3), SoftmaxXent(3)],
                     (1, 6, 6))
    assert ok.shapes() == [(2, 4, 4), (2, 4, 4), (3,), (3,)]
    with pytest.raises(ShapeError, match="layer 2"):
        NetworkSpec("n", [Conv2d(1, 2, 3, 3), ReLUT(), FullyConnected(30, 3)], (1, 6, 6))
    with pytest.raises(DomainError):
        NetworkSpec("n", [SoftmaxXent(2), ReLUT()], (2,))


def test_identity_fc_echoes_input():
    net = NetworkSpec("id", [FullyConnected(3, 3)], (3,))
    x = Tensor(np.array([[1.0, -2.0, 0.5]]))
    r = forward(net, {0: Tensor(np.eye(3))}, x)
    assert r.logits == x


def test_conv_relu_hand_values():
    net = NetworkSpec("h", [Conv2d(1, 1, 2, 2), ReLUT(0.0)], (1, 2, 3))
    x = Tensor(np.array([[[1, -2, 3], [4, 5, -6]]], dtype=np.float32))
    w = Tensor(np.array([[[[1, 0], [0, 1]]]], dtype=np.float32))
    r = forward(net, {0: w}, x)
    # conv: [1+5, -2-6] -> relu: [6, 0]
    assert r.activations[0].data.ravel().tolist() == [6, -8]
    assert r.activations[1].data.ravel().tolist() == [6, 0]


def test_trace_dimensions_and_kinds():
    net = NetworkSpec("t", [Conv2d(2, 3, 3, 3), BatchNormInf((1, 1, 1), (0, 0, 0)), ReLUT(),
                            FullyConnected(3 * 2 * 2, 4, "ternary"), SoftmaxXent(4)], (2, 4, 4))
    rng = np.random.default_rng(0)
    w = {0: Tensor(rng.normal(size=(3, 2, 3, 3))), 3: pack_ternary(rng.integers(-1, 2, (4, 12)))}
    r = forward(net, w, Tensor(rng.normal(size=(5, 2, 4, 4))))
    recs = r.trace.records
    assert isinstance(recs[0], MMRecord) and (recs[0].M, recs[0].N, recs[0].K) == (3, 5 * 2 * 2, 18)
    assert [type(x).__name__ for x in recs] == ["MMRecord", "PWRecord", "PWRecord", "MMRecord", "PWRecord"]
    assert (recs[1].op_kind, recs[2].op_kind) == ("mul_add", "ternary_select")
    assert (recs[3].M, recs[3].N, recs[3].K) == (4, 5, 12)
    expected = sum(2 * m.M * m.N * m.K for m in r.trace.mm()) + sum(
        p.n_elems for p in recs if isinstance(p, PWRecord))
    assert r.trace.dense_flops() == expected
    assert r.logits.shape == (5, 4)


def test_dense_flops_independent_of_sparsity():
    net = NetworkSpec("d", [FullyConnected(6, 4), ReLUT(), FullyConnected(4, 2)], (6,))
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(3, 6)))
    w1 = {0: Tensor(rng.normal(size=(4, 6))), 2: Tensor(rng.normal(size=(2, 4)))}
    w0 = {0: Tensor(np.zeros((4, 6))), 2: Tensor(np.zeros((2, 4)))}
    assert forward(net, w1, x).trace.dense_flops() == forward(net, w0, x).trace.dense_flops()


def test_forward_errors():
    net = NetworkSpec("e", [FullyConnected(3, 2, "ternary")], (3,))
    with pytest.raises(KeyError):
        forward(net, {}, Tensor(np.ones(3)))
    with pytest.raises(ShapeError):
        forward(net, {0: Tensor(np.ones((2, 3)))}, Tensor(np.ones(3)))
    with pytest.raises(ShapeError, match="layer 0"):
        forward(net, {0: pack_ternary(np.ones((2, 3)))}, Tensor(np.ones(4)))


def test_forward_deterministic_and_fp16sim():
    net = NetworkSpec("f", [FullyConnected(8, 8), ReLUT(), FullyConnected(8, 3, "ternary")], (8,))
    rng = np.random.default_rng(2)
    w = {0: Tensor.fp16(rng.normal(size=(8, 8))), 2: pack_ternary(rng.integers(-1, 2, (3, 8)))}
    x = Tensor.fp16(rng.normal(size=(4, 8)))
    a, b = forward(net, w, x), forward(net, w, x)
    assert a.logits == b.logits
    assert a.logits.dtype == FP16SIM
    w32 = {0: Tensor(w[0].data), 2: w[2]}
    ref = forward(net, w32, Tensor(x.data)).logits.data
    assert np.allclose(a.logits.data, ref, rtol=2e-2, atol=2e-2)
    with pytest.raises(ShapeError):
        forward(net, w32, x)
