"""Network description, im2col lowering and the traced forward pass.

Every Conv2d/FullyConnected layer is lowered to one matrix product
``W[M x K] @ X[K x N]``:

* Conv2d: M = out_ch, K = in_ch*kh*kw, N = batch*Hout*Wout (im2col columns)
* FullyConnected: M = out_dim, K = in_dim, N = batch

ReLUT and BatchNormInf become pointwise records. The trace keeps references
to both operands so the simulator can count skippable MACs.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import ClassVar, Mapping, Union

import numpy as np

from .errors import DomainError, ShapeError
from .half import round_f16
from .quantize import DEFAULT_RELU_TAU
from .tensor import (
    FP16SIM,
    FP32,
    Tensor,
    TernaryTensor,
    mm_ordered,
    ternary_mm_ordered,
)

PRECISIONS = ("full", "ternary")


def _positive(layer, **fields):
    for name, v in fields.items():
        if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v <= 0:
            raise DomainError(f"{layer}.{name} must be a positive integer, got {v!r}")


def _check_precision(layer, precision):
    if precision not in PRECISIONS:
        raise DomainError(f"{layer}.precision must be one of {PRECISIONS}, got {precision!r}")


@dataclass(frozen=True)
class Conv2d:
    in_ch: int
    out_ch: int
    kh: int
    kw: int
    stride: int = 1
    pad: int = 0
    precision: str = "full"

    type: ClassVar[str] = "Conv2d"
    parameterized: ClassVar[bool] = True

    def __post_init__(self):
        _positive("Conv2d", in_ch=self.in_ch, out_ch=self.out_ch, kh=self.kh, kw=self.kw,
                  stride=self.stride)
        if not isinstance(self.pad, (int, np.integer)) or self.pad < 0:
            raise DomainError(f"Conv2d.pad must be a non-negative integer, got {self.pad!r}")
        _check_precision("Conv2d", self.precision)

    @property
    def weight_shape(self):
        return (self.out_ch, self.in_ch, self.kh, self.kw)

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        hp, wp = h + 2 * self.pad, w + 2 * self.pad
        if self.kh > hp or self.kw > wp:
            raise ShapeError(
                f"kernel {self.kh}x{self.kw} larger than padded input {hp}x{wp}"
            )
        return (hp - self.kh) // self.stride + 1, (wp - self.kw) // self.stride + 1

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_ch:
            raise ShapeError(f"Conv2d expects [{self.in_ch}, H, W], got {list(in_shape)}")
        return (self.out_ch, *self.out_hw(in_shape[1], in_shape[2]))


@dataclass(frozen=True)
class FullyConnected:
    in_dim: int
    out_dim: int
    precision: str = "full"

    type: ClassVar[str] = "FullyConnected"
    parameterized: ClassVar[bool] = True

    def __post_init__(self):
        _positive("FullyConnected", in_dim=self.in_dim, out_dim=self.out_dim)
        _check_precision("FullyConnected", self.precision)

    @property
    def weight_shape(self):
        return (self.out_dim, self.in_dim)

    def out_shape(self, in_shape):
        # inputs of any rank are flattened channel-major
        if math.prod(in_shape) != self.in_dim:
            raise ShapeError(f"FullyConnected expects {self.in_dim} inputs, got {list(in_shape)}")
        return (self.out_dim,)


@dataclass(frozen=True)
class ReLUT:
    """ReLU that also zeroes activations at or below ``tau``."""

    tau: float = DEFAULT_RELU_TAU

    type: ClassVar[str] = "ReLUT"
    parameterized: ClassVar[bool] = False

    def __post_init__(self):
        if not self.tau >= 0:
            raise DomainError(f"ReLUT.tau must be non-negative, got {self.tau!r}")

    def out_shape(self, in_shape):
        return tuple(in_shape)


@dataclass(frozen=True)
class BatchNormInf:
    """Inference batch norm folded to ``scale * x + shift`` per channel."""

    scale: tuple
    shift: tuple

    type: ClassVar[str] = "BatchNormInf"
    parameterized: ClassVar[bool] = False

    def __post_init__(self):
        object.__setattr__(self, "scale", tuple(float(v) for v in self.scale))
        object.__setattr__(self, "shift", tuple(float(v) for v in self.shift))
        if not self.scale or len(self.scale) != len(self.shift):
            raise DomainError("BatchNormInf.scale and .shift must be non-empty and equal length")

    def out_shape(self, in_shape):
        if in_shape[0] != len(self.scale):
            raise ShapeError(
                f"BatchNormInf has {len(self.scale)} channels, input has {in_shape[0]}"
            )
        return tuple(in_shape)


@dataclass(frozen=True)
class SoftmaxXent:
    classes: int

    type: ClassVar[str] = "SoftmaxXent"
    parameterized: ClassVar[bool] = False

    def __post_init__(self):
        _positive("SoftmaxXent", classes=self.classes)

    def out_shape(self, in_shape):
        if tuple(in_shape) != (self.classes,):
            raise ShapeError(f"SoftmaxXent expects [{self.classes}], got {list(in_shape)}")
        return tuple(in_shape)


LayerSpec = Union[Conv2d, FullyConnected, ReLUT, BatchNormInf, SoftmaxXent]
LAYER_TYPES = {cls.type: cls for cls in (Conv2d, FullyConnected, ReLUT, BatchNormInf, SoftmaxXent)}


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    layers: tuple
    input_shape: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if not self.layers:
            raise DomainError("network has no layers")
        if not self.input_shape or any(d <= 0 for d in self.input_shape):
            raise DomainError(f"input_shape must have positive extents, got {list(self.input_shape)}")
        for i, layer in enumerate(self.layers):
            if isinstance(layer, SoftmaxXent) and i != len(self.layers) - 1:
                raise DomainError(f"layer {i}: SoftmaxXent must be the final layer")
        self.shapes()  # raises on a broken chain

    def shapes(self) -> list[tuple]:
        """Per-sample output shape of every layer."""
        out = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.out_shape(shape)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({layer.type}): {e}") from None
            out.append(shape)
        return out

    def param_layers(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.parameterized]

    def with_precisions(self, precisions: Mapping[int, str]) -> "NetworkSpec":
        layers = list(self.layers)
        for i, p in precisions.items():
            layers[i] = dataclasses.replace(layers[i], precision=p)
        return NetworkSpec(self.name, layers, self.input_shape)


# --- trace -----------------------------------------------------------------


@dataclass(frozen=True)
class MMRecord:
    """One mmOp: ``lhs[M x K] @ rhs[K x N]``; lhs holds weights, rhs activations."""

    M: int
    N: int
    K: int
    layer_id: int
    lhs: np.ndarray = field(repr=False, compare=False, default=None)
    rhs: np.ndarray = field(repr=False, compare=False, default=None)

    kind: ClassVar[str] = "MM"

    @property
    def dense_flops(self) -> int:
        return 2 * self.M * self.N * self.K


@dataclass(frozen=True)
class PWRecord:
    op_kind: str
    n_elems: int
    layer_id: int

    kind: ClassVar[str] = "PW"

    @property
    def dense_flops(self) -> int:
        return self.n_elems


@dataclass
class OpTrace:
    records: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def mm(self) -> list[MMRecord]:
        return [r for r in self.records if isinstance(r, MMRecord)]

    def dense_flops(self) -> int:
        return sum(r.dense_flops for r in self.records)


# --- lowering ----------------------------------------------------------------


def im2col_batch(x: np.ndarray, conv: Conv2d) -> np.ndarray:
    """``[B, C, H, W] -> [C*kh*kw, B*Hout*Wout]``.

    Rows are channel-major then patch row-major; columns are sample-major
    then output position row-major.
    """
    B, C, H, W = x.shape
    Ho, Wo = conv.out_hw(H, W)
    s, p = conv.stride, conv.pad
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((B, C, conv.kh, conv.kw, Ho, Wo), dtype=x.dtype)
    for i in range(conv.kh):
        for j in range(conv.kw):
            cols[:, :, i, j] = xp[:, :, i : i + s * Ho : s, j : j + s * Wo : s]
    return cols.transpose(1, 2, 3, 0, 4, 5).reshape(C * conv.kh * conv.kw, B * Ho * Wo)


def col2im_batch(cols: np.ndarray, x_shape, conv: Conv2d) -> np.ndarray:
    """Adjoint of :func:`im2col_batch`: scatter-add columns back to the input."""
    B, C, H, W = x_shape
    Ho, Wo = conv.out_hw(H, W)
    s, p = conv.stride, conv.pad
    c6 = cols.reshape(C, conv.kh, conv.kw, B, Ho, Wo).transpose(3, 0, 1, 2, 4, 5)
    xp = np.zeros((B, C, H + 2 * p, W + 2 * p), dtype=cols.dtype)
    for i in range(conv.kh):
        for j in range(conv.kw):
            xp[:, :, i : i + s * Ho : s, j : j + s * Wo : s] += c6[:, :, i, j]
    return xp[:, :, p : p + H, p : p + W]


def im2col(x: Tensor, conv: Conv2d) -> Tensor:
    """Lower one ``[C, H, W]`` input to a ``[C*kh*kw, Hout*Wout]`` matrix."""
    if len(x.shape) != 3 or x.shape[0] != conv.in_ch:
        raise ShapeError(f"im2col expects [{conv.in_ch}, H, W], got {list(x.shape)}")
    return Tensor(im2col_batch(x.data[None], conv), x.dtype)


def conv2d_direct(x: Tensor, w: Tensor, conv: Conv2d) -> Tensor:
    """Textbook cross-correlation with zero padding, one output at a time.

    Used as the independent check on the im2col path.
    """
    if len(x.shape) != 3 or tuple(w.shape) != conv.weight_shape or x.shape[0] != conv.in_ch:
        raise ShapeError(
            f"conv2d_direct: input {list(x.shape)} / weight {list(w.shape)} "
            f"do not match {conv}"
        )
    C, H, W = x.shape
    Ho, Wo = conv.out_hw(H, W)
    p, s = conv.pad, conv.stride
    xp = np.zeros((C, H + 2 * p, W + 2 * p))
    xp[:, p : p + H, p : p + W] = x.data
    wd = w.data.astype(np.float64)
    out = np.zeros((conv.out_ch, Ho, Wo))
    for f in range(conv.out_ch):
        for oh in range(Ho):
            for ow in range(Wo):
                acc = 0.0
                for c in range(C):
                    for i in range(conv.kh):
                        for j in range(conv.kw):
                            acc += xp[c, oh * s + i, ow * s + j] * wd[f, c, i, j]
                out[f, oh, ow] = acc
    return Tensor(out.astype(np.float32))


def fold_batchnorm(gamma, beta, mean, var, eps: float = 1e-5) -> BatchNormInf:
    """Fold inference batch norm into one multiply-add per element."""
    gamma, beta, mean, var = (np.asarray(v, dtype=np.float64).ravel() for v in (gamma, beta, mean, var))
    if np.any(var < 0):
        raise DomainError(f"negative variance at channel {int(np.flatnonzero(var < 0)[0])}")
    if eps < 0:
        raise DomainError(f"eps must be non-negative, got {eps}")
    denom = np.sqrt(var + eps)
    if np.any(denom == 0):
        raise DomainError("var + eps is zero; fold would divide by zero")
    scale = gamma / denom
    shift = beta - gamma * mean / denom
    return BatchNormInf(tuple(scale), tuple(shift))


# --- forward ------------------------------------------------------------------


@dataclass
class LayerWeights:
    """Weight matrix of one parameterized layer in lowered ``[M x K]`` form."""

    matrix: np.ndarray
    ternary: bool


def weight_matrix(layer, w, layer_id: int, dtype=np.float32) -> LayerWeights:
    expected = layer.weight_shape
    if isinstance(w, TernaryTensor):
        if layer.precision != "ternary":
            raise ShapeError(f"layer {layer_id} ({layer.type}): full-precision layer given TernaryTensor")
        arr, tern = w.values, True
    elif isinstance(w, Tensor):
        if layer.precision != "full":
            raise ShapeError(f"layer {layer_id} ({layer.type}): ternary layer given a dense Tensor")
        arr, tern = w.data.astype(dtype), False
    else:
        raise TypeError(f"layer {layer_id}: unsupported weight object {type(w).__name__}")
    if tuple(arr.shape) != tuple(expected):
        raise ShapeError(
            f"layer {layer_id} ({layer.type}): weight shape {list(arr.shape)}, expected {list(expected)}"
        )
    return LayerWeights(arr.reshape(expected[0], -1), tern)


@dataclass
class ForwardResult:
    activations: list
    logits: Tensor
    trace: OpTrace


@dataclass
class ForwardCache:
    """Per-layer quantities retained for the backward pass."""

    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    extra: list = field(default_factory=list)
    logits: np.ndarray = None
    probs: np.ndarray = None


def _lowered_mm(act_t: np.ndarray, lw: LayerWeights, fp16: bool) -> np.ndarray:
    # act_t is [N x K]; returns [N x M] so that the reduction runs over K in order.
    if lw.ternary:
        return ternary_mm_ordered(act_t, lw.matrix.T, fp16=fp16)
    return mm_ordered(act_t, lw.matrix.T, fp16=fp16)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def run_forward(net: NetworkSpec, mats: Mapping[int, LayerWeights], x: np.ndarray, *,
                taus: Mapping[int, float] | None = None, fp16: bool = False,
                trace: OpTrace | None = None, cache: ForwardCache | None = None) -> np.ndarray:
    """Array-level forward pass. Returns the final layer output.

    ``taus`` overrides ReLUT thresholds per layer index.
    """
    taus = taus or {}
    B = x.shape[0]
    h = x
    rnd = (lambda v: round_f16(v, v.dtype)) if fp16 else (lambda v: v)
    for i, layer in enumerate(net.layers):
        if cache is not None:
            cache.inputs.append(h)
        extra = None
        if isinstance(layer, (Conv2d, FullyConnected)):
            lw = mats[i]
            if isinstance(layer, Conv2d):
                cols = im2col_batch(h, layer)
                Ho, Wo = layer.out_hw(h.shape[2], h.shape[3])
                yt = _lowered_mm(cols.T, lw, fp16)
                out = yt.astype(h.dtype).reshape(B, Ho, Wo, layer.out_ch).transpose(0, 3, 1, 2)
                out = np.ascontiguousarray(out)
                rhs = cols
                extra = cols
            else:
                flat = h.reshape(B, -1)
                out = _lowered_mm(flat, lw, fp16).astype(h.dtype)
                rhs = flat.T
            if trace is not None:
                M, K = lw.matrix.shape
                trace.records.append(MMRecord(M, rhs.shape[1], K, i, lw.matrix, rhs))
        elif isinstance(layer, ReLUT):
            tau = taus.get(i, layer.tau)
            mask = h > tau
            out = np.where(mask, h, 0).astype(h.dtype)
            extra = mask
            if trace is not None:
                trace.records.append(PWRecord("ternary_select", h.size, i))
        elif isinstance(layer, BatchNormInf):
            shape = (1, -1) + (1,) * (h.ndim - 2)
            sc = np.asarray(layer.scale, dtype=h.dtype).reshape(shape)
            sh = np.asarray(layer.shift, dtype=h.dtype).reshape(shape)
            if fp16:
                sc, sh = rnd(sc), rnd(sh)
            out = rnd(rnd(h * sc) + sh).astype(h.dtype)
            if trace is not None:
                trace.records.append(PWRecord("mul_add", h.size, i))
        elif isinstance(layer, SoftmaxXent):
            z = h.reshape(B, -1)
            out = softmax(z.astype(np.float64)).astype(h.dtype)
            if cache is not None:
                cache.logits = z
                cache.probs = out
            if trace is not None:
                trace.records.append(PWRecord("mul_add", z.size, i))
        else:  # pragma: no cover
            raise TypeError(f"unknown layer {layer!r}")
        if cache is not None:
            cache.outputs.append(out)
            cache.extra.append(extra)
        h = out
    return h


def forward(net: NetworkSpec, weights: Mapping[int, Tensor | TernaryTensor], x: Tensor, *,
            relu_tau: float | None = None) -> ForwardResult:
    """Run ``x`` (shape ``[B, *input_shape]`` or ``input_shape``) through ``net``.

    Returns Tensor activations per layer, pre-softmax logits and the op
    trace. fp16sim inputs run the whole network on the 16-bit datapath model
    and require fp16sim full-precision weights.
    """
    data = x.data
    if tuple(data.shape) == net.input_shape:
        data = data[None]
    if tuple(data.shape[1:]) != net.input_shape:
        raise ShapeError(
            f"layer 0 ({net.layers[0].type}): input {list(x.shape)} does not match "
            f"input_shape {list(net.input_shape)}"
        )
    fp16 = x.dtype == FP16SIM
    mats = {}
    for i in net.param_layers():
        if i not in weights:
            raise KeyError(f"missing weights for layer {i} ({net.layers[i].type})")
        w = weights[i]
        if fp16 and isinstance(w, Tensor) and w.dtype != FP16SIM:
            raise ShapeError(f"layer {i}: fp16sim input needs fp16sim weights")
        mats[i] = weight_matrix(net.layers[i], w, i)
    taus = {i: relu_tau for i, l in enumerate(net.layers) if isinstance(l, ReLUT)} if relu_tau is not None else None
    trace = OpTrace()
    cache = ForwardCache()
    run_forward(net, mats, data.astype(np.float32), taus=taus, fp16=fp16, trace=trace, cache=cache)
    dtype = FP16SIM if fp16 else FP32
    acts = [Tensor(_rank4(a), FP32 if isinstance(l, SoftmaxXent) else dtype)
            for a, l in zip(cache.outputs, net.layers)]
    last = net.layers[-1]
    logits = cache.logits if isinstance(last, SoftmaxXent) else cache.outputs[-1].reshape(data.shape[0], -1)
    return ForwardResult(acts, Tensor(logits, dtype), trace)


def _rank4(a: np.ndarray) -> np.ndarray:
    return a if a.ndim <= 4 else a.reshape(a.shape[0], -1)
