import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ternlac.errors import DegenerateInputError, DomainError, ShapeError
from ternlac.quantize import (
    ThresholdPolicy,
    l1_activation_penalty,
    pair_density,
    relu_threshold,
    ternarize,
)
from ternlac.tensor import Tensor, pack_ternary

# erf(t / sqrt(pi)) at t = 0.7: P(|W| <= 0.7 E|W|) for W ~ N(0, 1), evaluated with math.erf
GAUSS_ZERO_FRACTION_T07 = 0.42351009748299323


def test_fixed_threshold_examples():
    w = Tensor(np.array([0.5, -0.5, 0.1, -0.1, 0.3, -0.3]))
    t, w_th = ternarize(w, ThresholdPolicy.fixed(0.3))
    assert w_th == 0.3
    assert t.values.tolist() == [1, -1, 0, 0, 0, 0]


def test_mean_scaled_resolution():
    w = Tensor(np.array([1.0, -2.0, 3.0, 0.0]))
    t, w_th = ternarize(w, ThresholdPolicy.mean_scaled(0.7))
    assert w_th == pytest.approx(0.7 * 1.5)
    assert t.values.tolist() == [0, -1, 1, 0]


def test_all_zero_mean_scaled_is_degenerate():
    with pytest.raises(DegenerateInputError):
        ternarize(Tensor(np.zeros(4)))


def test_policy_validation():
    with pytest.raises(DomainError):
        ThresholdPolicy("median", 0.7)
    with pytest.raises(DomainError):
        ThresholdPolicy.fixed(0.0)


@given(hnp.arrays(np.float32, st.integers(1, 64), elements=st.floats(-4, 4, width=32)),
       st.floats(0.01, 3))
def test_output_is_ternary_and_monotone(w, th):
    t, _ = ternarize(Tensor(w), ThresholdPolicy.fixed(th))
    v = t.values
    assert set(np.unique(v)) <= {-1, 0, 1}
    order = np.argsort(w, kind="stable")
    assert np.all(np.diff(v[order]) >= 0)


def test_gaussian_zero_fraction_closed_form():
    assert math.erf(0.7 / math.sqrt(math.pi)) == pytest.approx(GAUSS_ZERO_FRACTION_T07, abs=1e-15)
    w = np.random.default_rng(123).standard_normal(10**6).astype(np.float32)
    t, _ = ternarize(Tensor(w))
    frac = float(np.mean(t.values == 0))
    assert abs(frac - GAUSS_ZERO_FRACTION_T07) < 0.003


def test_relu_threshold():
    x = Tensor(np.array([-1.0, 0.005, 0.01, 0.02]))
    assert relu_threshold(x).data.tolist() == [0, 0, 0, pytest.approx(0.02)]
    assert relu_threshold(x, 0.0).data.tolist()[1] == pytest.approx(0.005)
    with pytest.raises(DomainError):
        relu_threshold(x, -0.1)


@given(hnp.arrays(np.float32, st.integers(1, 50), elements=st.floats(-2, 2, width=32)),
       st.floats(0, 1))
def test_relu_threshold_never_densifies(x, tau):
    dens = lambda a: np.count_nonzero(a)
    assert dens(relu_threshold(Tensor(x), tau).data) <= dens(x)


def test_pair_density_examples():
    w = pack_ternary(np.ones((4, 3)))
    assert pair_density(Tensor(np.ones((2, 4))), w).density == 1.0
    a = np.ones((2, 4))
    a[:, ::2] = 0
    assert pair_density(Tensor(a), w).density == 0.5
    assert pair_density(Tensor(np.zeros((2, 4))), w).density == 0.0
    with pytest.raises(ShapeError):
        pair_density(Tensor(np.ones((2, 3))), w)


def _brute_pairs(a, w):
    M, K = a.shape
    N = w.shape[1]
    return sum(1 for i in range(M) for j in range(N) for k in range(K) if a[i, k] != 0 and w[k, j] != 0)


@given(st.data())
def test_pair_density_matches_triple_loop(data):
    m, k, n = (data.draw(st.integers(1, 16)) for _ in range(3))
    a = data.draw(hnp.arrays(np.float32, (m, k), elements=st.sampled_from([0.0, 1.5, -2.0])))
    w = data.draw(hnp.arrays(np.int8, (k, n), elements=st.sampled_from([-1, 0, 1])))
    s = pair_density(Tensor(a), pack_ternary(w))
    assert s.total == m * n * k
    assert s.nonzero == _brute_pairs(a, w)


def test_l1_penalty_and_subgradient():
    loss, grads = l1_activation_penalty([np.array([1.0, -2.0, 0.0])], 0.5)
    assert loss == 1.5
    assert grads[0].tolist() == [0.5, -0.5, 0.0]
