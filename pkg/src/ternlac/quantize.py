"""Threshold ternarization, thresholded ReLU and operand-pair sparsity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DomainError, ShapeError
from .tensor import DensityStats, Tensor, TernaryTensor, _pack_codes

DEFAULT_RELU_TAU = 0.01
DEFAULT_THRESHOLD_FACTOR = 0.7


@dataclass(frozen=True)
class ThresholdPolicy:
    """How the ternarization threshold is chosen.

    ``fixed`` uses ``value`` as the threshold. ``mean_scaled`` resolves to
    ``value * mean(|W|)`` over the whole tensor.
    """

    kind: str = "mean_scaled"
    value: float = DEFAULT_THRESHOLD_FACTOR

    def __post_init__(self):
        if self.kind not in ("fixed", "mean_scaled"):
            raise DomainError(f"unknown threshold policy {self.kind!r}")
        if not self.value > 0:
            raise DomainError(f"threshold parameter must be positive, got {self.value}")

    @classmethod
    def fixed(cls, w_th: float) -> "ThresholdPolicy":
        return cls("fixed", float(w_th))

    @classmethod
    def mean_scaled(cls, t: float = DEFAULT_THRESHOLD_FACTOR) -> "ThresholdPolicy":
        return cls("mean_scaled", float(t))

    def resolve(self, w: np.ndarray) -> float:
        if self.kind == "fixed":
            return self.value
        mean_abs = float(np.mean(np.abs(w), dtype=np.float64))
        if mean_abs == 0.0:
            raise DegenerateInputError("mean_scaled threshold on an all-zero tensor")
        return self.value * mean_abs

    def __str__(self):
        return f"fixed({self.value})" if self.kind == "fixed" else f"mean_scaled({self.value})"


def ternarize_array(w: np.ndarray, policy: ThresholdPolicy) -> tuple[np.ndarray, float]:
    """Array form of :func:`ternarize`; returns int8 values and the threshold."""
    w = np.asarray(w)
    if w.size == 0:
        raise DegenerateInputError("cannot ternarize an empty tensor")
    w_th = policy.resolve(w)
    out = np.zeros(w.shape, dtype=np.int8)
    out[w > w_th] = 1
    out[w < -w_th] = -1
    return out, w_th


def ternarize(w: Tensor, policy: ThresholdPolicy | None = None) -> tuple[TernaryTensor, float]:
    """Map weights to +1 above ``w_th``, -1 below ``-w_th`` and 0 otherwise.

    Ties at ``|W| == w_th`` go to 0. Returns the packed weights and the
    resolved threshold.
    """
    values, w_th = ternarize_array(w.data, policy or ThresholdPolicy())
    return _pack_codes(values, values.shape), w_th


def relu_threshold(x: Tensor, tau: float = DEFAULT_RELU_TAU) -> Tensor:
    if tau < 0:
        raise DomainError(f"tau must be non-negative, got {tau}")
    return Tensor(np.where(x.data > tau, x.data, 0.0), x.dtype)


def _nz_mask(x) -> np.ndarray:
    if isinstance(x, TernaryTensor):
        return x.values != 0
    if isinstance(x, Tensor):
        return x.data != 0
    return np.asarray(x) != 0


def pair_density_masks(a_nz: np.ndarray, b_nz: np.ndarray) -> DensityStats:
    """Pair statistics for ``a @ b`` from boolean nonzero masks."""
    if a_nz.ndim != 2 or b_nz.ndim != 2 or a_nz.shape[1] != b_nz.shape[0]:
        raise ShapeError(f"cannot pair {list(a_nz.shape)} with {list(b_nz.shape)}")
    M, K = a_nz.shape
    N = b_nz.shape[1]
    # sum_k (#i with a[i,k] != 0) * (#j with b[k,j] != 0)
    per_k = a_nz.sum(axis=0, dtype=np.int64) * b_nz.sum(axis=1, dtype=np.int64)
    return DensityStats(M * N * K, int(per_k.sum()))


def pair_density(a, w) -> DensityStats:
    """Fraction of the M*N*K candidate MACs of ``a @ w`` with both operands nonzero.

    Either operand may be a :class:`Tensor`, :class:`TernaryTensor` or array.
    """
    return pair_density_masks(_nz_mask(a), _nz_mask(w))


def l1_activation_penalty(acts, lam: float) -> tuple[float, list[np.ndarray]]:
    """``lam * sum|x|`` over every tensor, with subgradient ``lam * sign(x)``."""
    if lam < 0:
        raise DomainError(f"lambda must be non-negative, got {lam}")
    loss = 0.0
    grads = []
    for a in acts:
        arr = a.data if isinstance(a, Tensor) else np.asarray(a)
        loss += lam * float(np.abs(arr).sum(dtype=np.float64))
        grads.append((lam * np.sign(arr)).astype(arr.dtype, copy=False))
    return loss, grads
