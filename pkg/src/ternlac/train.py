"""Layer-wise backpropagation and the ternary training protocol.

Ternary layers keep a float32 master copy. Each step quantizes the masters
once; forward and backward both use the quantized weights, and the gradient
with respect to the quantized weights is applied to the master unchanged
(straight-through).

Training loss per batch of B samples::

    mean_b xent_b + (lambda_l1 / B) * sum_b sum |y_b|    (y: every ReLUT output)
"""

from __future__ import annotations

import dataclasses
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .data import Dataset
from .errors import DivergenceError, DomainError, ShapeError, TernlacError
from .graph import (
    BatchNormInf,
    Conv2d,
    ForwardCache,
    FullyConnected,
    LayerWeights,
    NetworkSpec,
    OpTrace,
    ReLUT,
    SoftmaxXent,
    col2im_batch,
    run_forward,
    weight_matrix,
)
from .quantize import ThresholdPolicy, pair_density_masks, ternarize_array
from .tensor import DensityStats, Tensor, pack_ternary

log = logging.getLogger(__name__)

TRAINLOG_HEADER = "epoch,train_error,lr,loss_task,loss_l1,layer,fwd_density,bwd_density"


@dataclass(frozen=True)
class TrainConfig:
    epochs_total: int = 60
    epochs_full_precision: int = 15
    lr0: float = 0.05
    lr_drop_factor: float = 0.1
    plateau_window: int = 5
    plateau_min_delta: float = 1e-4
    lambda_l1: float = 1e-4
    relu_tau: float | None = 0.01  # None keeps each ReLUT layer's own tau
    relu_tau_start_epoch: int = 1
    grad_update_filter: bool = False
    threshold_policy: ThresholdPolicy = field(default_factory=ThresholdPolicy)
    seed: int = 0
    batch_size: int = 32
    momentum: float = 0.9

    def __post_init__(self):
        if self.epochs_total < 0 or not 0 <= self.epochs_full_precision <= self.epochs_total:
            raise DomainError(
                f"need 0 <= epochs_full_precision ({self.epochs_full_precision}) "
                f"<= epochs_total ({self.epochs_total})"
            )
        if not self.lr0 > 0:
            raise DomainError(f"lr0 must be positive, got {self.lr0}")
        if not 0 < self.lr_drop_factor < 1:
            raise DomainError(f"lr_drop_factor must lie in (0, 1), got {self.lr_drop_factor}")
        if self.plateau_window < 1:
            raise DomainError(f"plateau_window must be >= 1, got {self.plateau_window}")
        if self.plateau_min_delta < 0 or self.lambda_l1 < 0:
            raise DomainError("plateau_min_delta and lambda_l1 must be non-negative")
        if self.relu_tau is not None and self.relu_tau < 0:
            raise DomainError(f"relu_tau must be non-negative, got {self.relu_tau}")
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.momentum < 1:
            raise DomainError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not 0 <= self.seed < 2**64:
            raise DomainError(f"seed must fit in 64 unsigned bits, got {self.seed}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


# --- gradients ---------------------------------------------------------------


@dataclass
class BackwardRecord:
    """Operands of one backward matrix product, in ``lhs[M x K] @ rhs[K x N]`` form."""

    layer_id: int
    op: str  # "dgrad" (input gradient) or "wgrad" (weight gradient)
    lhs: np.ndarray
    rhs: np.ndarray


@dataclass
class Gradients:
    weights: dict = field(default_factory=dict)  # layer -> array in weight_shape
    bn: dict = field(default_factory=dict)  # layer -> (dscale, dshift)
    input: np.ndarray | None = None
    loss_task: float = 0.0
    loss_l1: float = 0.0
    records: list | None = None

    @property
    def loss(self) -> float:
        return self.loss_task + self.loss_l1


def softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample cross-entropy and softmax probabilities (float64)."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    xent = lse - z[np.arange(len(labels)), labels]
    return xent, np.exp(z - lse[:, None])


def grad_update_filter(logits: np.ndarray, labels: np.ndarray, upstream: np.ndarray):
    """Zero the error rows of correctly classified samples.

    Returns None, meaning skip the whole step, when every sample is correct.
    """
    correct = np.argmax(logits, axis=1) == labels
    if correct.all():
        return None
    if not correct.any():
        return upstream
    out = upstream.copy()
    out[correct] = 0
    return out


def _check_trainable(net: NetworkSpec):
    if not isinstance(net.layers[-1], SoftmaxXent):
        raise ShapeError("training needs a network ending in SoftmaxXent")


def backprop(net: NetworkSpec, mats: Mapping[int, LayerWeights], cache: ForwardCache,
             labels: np.ndarray, *, lambda_l1: float = 0.0, sample_mask: np.ndarray | None = None,
             instrument: bool = False) -> Gradients:
    """Reverse pass over a populated :class:`ForwardCache`.

    ``sample_mask`` (bool per sample) drops samples from both the task error
    and the activation penalty; it is how the update filter is applied.
    """
    if cache.probs is None or len(cache.inputs) != len(net.layers):
        raise TernlacError("backward needs the activations of a completed forward pass")
    B = len(labels)
    xent, probs = softmax_xent(cache.logits, labels)
    grads = Gradients(records=[] if instrument else None)
    grads.loss_task = float(xent.mean())
    relu_outs = [cache.outputs[i] for i, l in enumerate(net.layers) if isinstance(l, ReLUT)]
    grads.loss_l1 = lambda_l1 / B * float(sum(np.abs(y).sum(dtype=np.float64) for y in relu_outs))
    if not np.isfinite(grads.loss):
        raise DivergenceError(f"non-finite loss {grads.loss}")

    dtype = cache.inputs[0].dtype
    keep = np.ones(B, dtype=dtype) if sample_mask is None else sample_mask.astype(dtype)
    g = probs
    g[np.arange(B), labels] -= 1.0
    g = (g / B * keep[:, None]).astype(dtype)
    l1_scale = (lambda_l1 / B * keep).astype(dtype)

    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        x = cache.inputs[i]
        if isinstance(layer, SoftmaxXent):
            g = g.reshape(x.shape)
        elif isinstance(layer, ReLUT):
            y = cache.outputs[i]
            if lambda_l1:
                g = g + l1_scale.reshape((B,) + (1,) * (y.ndim - 1)) * np.sign(y)
            g = g * cache.extra[i]
        elif isinstance(layer, BatchNormInf):
            axes = (0,) + tuple(range(2, x.ndim))
            shape = (1, -1) + (1,) * (x.ndim - 2)
            grads.bn[i] = ((g * x).sum(axis=axes), g.sum(axis=axes))
            g = g * np.asarray(layer.scale, dtype=dtype).reshape(shape)
        elif isinstance(layer, FullyConnected):
            W = mats[i].matrix.astype(dtype, copy=False)
            flat = x.reshape(B, -1)
            gm = g.T  # [M x N]
            grads.weights[i] = gm @ flat
            if grads.records is not None:
                grads.records.append(BackwardRecord(i, "dgrad", W.T, gm))
                grads.records.append(BackwardRecord(i, "wgrad", gm, flat))
            g = (g @ W).reshape(x.shape)
        elif isinstance(layer, Conv2d):
            W = mats[i].matrix.astype(dtype, copy=False)
            cols = cache.extra[i]
            gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(layer.out_ch, -1)
            grads.weights[i] = (gm @ cols.T).reshape(layer.weight_shape)
            if grads.records is not None:
                grads.records.append(BackwardRecord(i, "dgrad", W.T, gm))
                grads.records.append(BackwardRecord(i, "wgrad", gm, cols.T))
            g = col2im_batch(W.T @ gm, x.shape, layer)
        else:  # pragma: no cover
            raise TypeError(f"unknown layer {layer!r}")
    grads.input = g
    return grads


def measure_backward_density(records) -> dict[int, DensityStats]:
    """Pair density of the two backward products of every layer."""
    if records is None:
        raise TernlacError("backward instrumentation was disabled")
    out: dict[int, DensityStats] = {}
    for r in records:
        s = pair_density_masks(r.lhs != 0, r.rhs != 0)
        out[r.layer_id] = out.get(r.layer_id, DensityStats(0, 0)) + s
    return out


def forward_density(trace: OpTrace) -> dict[int, DensityStats]:
    return {r.layer_id: pair_density_masks(r.lhs != 0, r.rhs != 0) for r in trace.mm()}


def _mats_from_weights(net, weights, dtype) -> dict[int, LayerWeights]:
    mats = {}
    for i in net.param_layers():
        if i not in weights:
            raise KeyError(f"missing weights for layer {i} ({net.layers[i].type})")
        mats[i] = weight_matrix(net.layers[i], weights[i], i, dtype)
    return mats


def backward(net: NetworkSpec, weights: Mapping, x: np.ndarray, labels: np.ndarray, *,
             lambda_l1: float = 0.0, relu_tau: float | None = None, filter_correct: bool = False,
             instrument: bool = False) -> Gradients | None:
    """Gradients of the training loss for one batch.

    ``weights`` maps layer index to a Tensor/TernaryTensor or, for gradient
    checks at higher precision, a raw array in the layer's weight shape. With
    ``filter_correct`` the update filter is applied; None means the whole
    batch was classified correctly and no step should be taken.
    """
    _check_trainable(net)
    x = np.asarray(x)
    dtype = x.dtype if x.dtype in (np.float32, np.float64) else np.float32
    mats = {}
    for i in net.param_layers():
        w = weights.get(i)
        if isinstance(w, np.ndarray):
            mats[i] = LayerWeights(w.astype(dtype).reshape(w.shape[0], -1), False)
        elif w is None:
            raise KeyError(f"missing weights for layer {i} ({net.layers[i].type})")
        else:
            mats[i] = weight_matrix(net.layers[i], w, i, dtype)
    taus = _tau_map(net, relu_tau)
    cache = ForwardCache()
    run_forward(net, mats, x.astype(dtype), taus=taus, cache=cache)
    labels = np.asarray(labels)
    mask = None
    if filter_correct:
        probe = grad_update_filter(cache.logits, labels, np.ones((len(labels), 1)))
        if probe is None:
            return None
        mask = probe[:, 0] != 0
    return backprop(net, mats, cache, labels, lambda_l1=lambda_l1, sample_mask=mask,
                    instrument=instrument)


def _tau_map(net, tau):
    if tau is None:
        return None
    return {i: tau for i, l in enumerate(net.layers) if isinstance(l, ReLUT)}


# --- learning-rate schedule ----------------------------------------------------


def lr_schedule_step(history, current_lr: float, cfg: TrainConfig) -> float:
    """Drop the rate when the last ``plateau_window`` errors fail to beat the
    best earlier error by ``plateau_min_delta``.

    Needs at least ``plateau_window + 1`` entries; otherwise the rate is kept.
    """
    w = cfg.plateau_window
    if len(history) <= w:
        return current_lr
    best_before = min(history[:-w])
    recent = min(history[-w:])
    if best_before - recent < cfg.plateau_min_delta:
        return current_lr * cfg.lr_drop_factor
    return current_lr


# --- shadow weights and logs ---------------------------------------------------


@dataclass
class ShadowWeights:
    """Float32 masters of the ternary layers and their current quantized views."""

    policy: ThresholdPolicy
    full_precision: dict = field(default_factory=dict)
    quantized: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    _values: dict = field(default_factory=dict, repr=False)

    def refresh(self):
        for i, master in self.full_precision.items():
            values, w_th = ternarize_array(master, self.policy)
            self._values[i] = values
            self.quantized[i] = pack_ternary(values)
            self.thresholds[i] = w_th

    def values(self, i) -> np.ndarray:
        return self._values[i]

    def consistent(self) -> bool:
        return all(
            np.array_equal(self.quantized[i].values, ternarize_array(m, self.policy)[0])
            for i, m in self.full_precision.items()
        )


@dataclass
class EpochLog:
    epoch: int
    train_error: float
    lr: float
    loss_task: float
    loss_l1: float
    fwd: dict  # layer -> DensityStats
    bwd: dict  # layer -> DensityStats
    thresholds: dict = field(default_factory=dict)
    act_zero_fraction: float = 0.0
    skipped_steps: int = 0

    def fwd_total(self) -> DensityStats:
        return sum(self.fwd.values(), DensityStats(0, 0))

    def bwd_total(self) -> DensityStats:
        return sum(self.bwd.values(), DensityStats(0, 0))


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    @property
    def train_errors(self) -> list[float]:
        return [e.train_error for e in self.epochs]

    @property
    def lrs(self) -> list[float]:
        return [e.lr for e in self.epochs]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(TRAINLOG_HEADER + "\n")
        for e in self.epochs:
            for layer in sorted(e.fwd):
                bwd = e.bwd.get(layer, DensityStats(0, 0))
                buf.write(
                    f"{e.epoch},{e.train_error!r},{e.lr!r},{e.loss_task!r},{e.loss_l1!r},"
                    f"{layer},{e.fwd[layer].density!r},{bwd.density!r}\n"
                )
        return buf.getvalue()


@dataclass
class TrainResult:
    net: NetworkSpec
    weights: dict  # layer -> Tensor (full) or TernaryTensor (ternary)
    shadow: ShadowWeights
    log: TrainLog

    @property
    def final_error(self) -> float:
        return self.log.epochs[-1].train_error if self.log.epochs else float("nan")


# --- training loop -------------------------------------------------------------


def init_weights(net: NetworkSpec, rng: np.random.Generator) -> dict[int, np.ndarray]:
    """Initial weights, drawn in layer order.

    He-normal, except that a layer feeding a BatchNormInf starts at unit
    variance: the folded scale then carries the fan-in normalisation, so the
    master sits on the same scale as its {-1, 0, +1} quantization.
    """
    out = {}
    for i in net.param_layers():
        shape = net.layers[i].weight_shape
        fan_in = int(np.prod(shape[1:]))
        followed_by_bn = i + 1 < len(net.layers) and isinstance(net.layers[i + 1], BatchNormInf)
        std = 1.0 if followed_by_bn else np.sqrt(2.0 / fan_in)
        out[i] = (std * rng.standard_normal(shape)).astype(np.float32)
    return out


def _effective_mats(net, params, shadow, ternary_phase) -> dict[int, LayerWeights]:
    mats = {}
    for i in net.param_layers():
        if ternary_phase and net.layers[i].precision == "ternary":
            mats[i] = LayerWeights(shadow.values(i).reshape(params[i].shape[0], -1), True)
        else:
            mats[i] = LayerWeights(params[i].reshape(params[i].shape[0], -1), False)
    return mats


def _error_rate(net, mats, x, y, taus) -> tuple[float, float]:
    cache = ForwardCache()
    run_forward(net, mats, x, taus=taus, cache=cache)
    err = float(np.mean(np.argmax(cache.logits, axis=1) != y))
    relu = [cache.outputs[i] for i, l in enumerate(net.layers) if isinstance(l, ReLUT)]
    total = sum(a.size for a in relu)
    zeros = sum(int(np.count_nonzero(a == 0)) for a in relu)
    return err, (zeros / total if total else 0.0)


def train(net: NetworkSpec, cfg: TrainConfig, dataset: Dataset, *,
          init: Mapping[int, np.ndarray] | None = None,
          on_epoch_end: Callable[[int, ShadowWeights, dict], None] | None = None) -> TrainResult:
    """Run the full protocol: full-precision pre-initialization for
    ``epochs_full_precision`` epochs, then quantized training of the layers
    marked ternary.

    ``init`` supplies starting full-precision weights (finetuning); otherwise
    they are drawn from the seeded generator. Raises DivergenceError with the
    epoch index if the loss stops being finite.
    """
    _check_trainable(net)
    if tuple(dataset.sample_shape) != net.input_shape:
        raise ShapeError(
            f"dataset samples {list(dataset.sample_shape)} do not match input_shape {list(net.input_shape)}"
        )
    rng = np.random.default_rng(cfg.seed)
    if init is None:
        params = init_weights(net, rng)
    else:
        params = {}
        for i in net.param_layers():
            w = np.asarray(init[i], dtype=np.float32)
            if w.shape != net.layers[i].weight_shape:
                raise ShapeError(
                    f"layer {i} ({net.layers[i].type}): pretrained shape {list(w.shape)}, "
                    f"expected {list(net.layers[i].weight_shape)}"
                )
            params[i] = w.copy()
    velocity = {i: np.zeros_like(w) for i, w in params.items()}
    ternary_layers = [i for i in net.param_layers() if net.layers[i].precision == "ternary"]
    shadow = ShadowWeights(cfg.threshold_policy)
    shadow.full_precision = {i: params[i] for i in ternary_layers}  # shares storage with params
    if ternary_layers:
        shadow.refresh()

    x_all, y_all = dataset.x.astype(np.float32), dataset.y
    n = len(dataset)
    lr = cfg.lr0
    lr_history: list[float] = []
    tlog = TrainLog()

    for epoch in range(1, cfg.epochs_total + 1):
        ternary_phase = epoch > cfg.epochs_full_precision
        tau = cfg.relu_tau if epoch >= cfg.relu_tau_start_epoch else 0.0
        taus = _tau_map(net, tau)
        fwd: dict[int, DensityStats] = {}
        bwd: dict[int, DensityStats] = {}
        loss_task = loss_l1 = 0.0
        batches = skipped = 0
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            mats = _effective_mats(net, params, shadow, ternary_phase)
            trace, cache = OpTrace(), ForwardCache()
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is caught below
                run_forward(net, mats, xb, taus=taus, trace=trace, cache=cache)
            for layer, s in forward_density(trace).items():
                fwd[layer] = fwd.get(layer, DensityStats(0, 0)) + s
            mask = None
            if cfg.grad_update_filter:
                probe = grad_update_filter(cache.logits, yb, np.ones((len(yb), 1)))
                if probe is None:
                    skipped += 1
                    batches += 1
                    xent, _ = softmax_xent(cache.logits, yb)
                    loss_task += float(xent.mean())
                    continue
                mask = probe[:, 0] != 0
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    grads = backprop(net, mats, cache, yb, lambda_l1=cfg.lambda_l1,
                                     sample_mask=mask, instrument=True)
            except DivergenceError as e:
                raise DivergenceError(f"epoch {epoch}: {e}", epoch=epoch) from None
            for layer, s in measure_backward_density(grads.records).items():
                bwd[layer] = bwd.get(layer, DensityStats(0, 0)) + s
            loss_task += grads.loss_task
            loss_l1 += grads.loss_l1
            batches += 1
            for i, gw in grads.weights.items():
                v = velocity[i]
                v *= cfg.momentum
                v += gw.astype(np.float32)
                params[i] -= np.float32(lr) * v
            if ternary_layers:
                shadow.refresh()

        mats = _effective_mats(net, params, shadow, ternary_phase)
        err, zero_frac = _error_rate(net, mats, x_all, y_all, taus)
        entry = EpochLog(epoch, err, lr, loss_task / batches, loss_l1 / batches, fwd, bwd,
                         dict(shadow.thresholds), zero_frac, skipped)
        tlog.epochs.append(entry)
        log.debug("epoch %d err=%.4f lr=%.3g loss=%.4f", epoch, err, lr, entry.loss_task)
        if on_epoch_end is not None:
            on_epoch_end(epoch, shadow, params)

        # The rate is only lowered once quantized training runs; pre-init keeps lr0.
        # Plateau history restarts after every drop, seeded with the error at the drop.
        if not ternary_phase:
            continue
        lr_history.append(err)
        new_lr = lr_schedule_step(lr_history, lr, cfg)
        if new_lr != lr:
            lr_history = [err]
            lr = new_lr

    return TrainResult(net, _final_weights(net, params, shadow), shadow, tlog)


def _final_weights(net, params, shadow) -> dict:
    out = {}
    for i in net.param_layers():
        if net.layers[i].precision == "ternary":
            out[i] = shadow.quantized[i]
        else:
            out[i] = Tensor(params[i])
    return out


def finetune_from(pretrained: Mapping[int, Tensor | np.ndarray], net: NetworkSpec,
                  cfg: TrainConfig, dataset: Dataset) -> TrainResult:
    """Quantize every parameterized layer but the first and keep training.

    Masters start from ``pretrained``; there is no full-precision phase.
    """
    layers = net.param_layers()
    precisions = {i: ("full" if k == 0 else "ternary") for k, i in enumerate(layers)}
    tnet = net.with_precisions(precisions)
    init = {}
    for i in layers:
        if i not in pretrained:
            raise KeyError(f"missing pretrained weights for layer {i}")
        w = pretrained[i]
        init[i] = w.data if isinstance(w, Tensor) else np.asarray(w)
    return train(tnet, cfg.replace(epochs_full_precision=0), dataset, init=init)


def ternarize_and_freeze(pretrained: Mapping[int, Tensor | np.ndarray], net: NetworkSpec,
                         cfg: TrainConfig, dataset: Dataset) -> TrainResult:
    """Baseline for finetuning: quantize the same layers and train nothing."""
    return finetune_from(pretrained, net, cfg.replace(epochs_total=0, epochs_full_precision=0),
                         dataset)


def evaluate(net: NetworkSpec, weights: Mapping, dataset: Dataset,
             relu_tau: float | None = None) -> float:
    """Classification error of ``weights`` on ``dataset``."""
    mats = _mats_from_weights(net, weights, np.float32)
    err, _ = _error_rate(net, mats, dataset.x.astype(np.float32), dataset.y, _tau_map(net, relu_tau))
    return err


SPARSITY_HEADER = "layer,type,precision,fwd_pairs,fwd_nonzero,fwd_density,bwd_pairs,bwd_nonzero,bwd_density"


@dataclass
class SparsityReport:
    """Per-layer operand-pair densities of one forward and backward sweep."""

    net: NetworkSpec
    fwd: dict
    bwd: dict

    def totals(self) -> tuple[DensityStats, DensityStats]:
        return sum(self.fwd.values(), DensityStats(0, 0)), sum(self.bwd.values(), DensityStats(0, 0))

    def to_csv(self) -> str:
        rows = [SPARSITY_HEADER]
        empty = DensityStats(0, 0)
        for i in sorted(self.fwd):
            layer = self.net.layers[i]
            f, b = self.fwd[i], self.bwd.get(i, empty)
            rows.append(f"{i},{layer.type},{layer.precision},{f.total},{f.nonzero},{f.density!r},"
                        f"{b.total},{b.nonzero},{b.density!r}")
        f, b = self.totals()
        rows.append(f"total,all,all,{f.total},{f.nonzero},{f.density!r},{b.total},{b.nonzero},{b.density!r}")
        return "\n".join(rows) + "\n"


def sparsity_report(net: NetworkSpec, weights: Mapping, dataset: Dataset, *,
                    relu_tau: float | None = None, lambda_l1: float = 0.0,
                    batch_size: int = 32) -> SparsityReport:
    """Measure forward and backward pair densities over ``dataset`` in order."""
    _check_trainable(net)
    mats = _mats_from_weights(net, weights, np.float32)
    taus = _tau_map(net, relu_tau)
    fwd: dict[int, DensityStats] = {}
    bwd: dict[int, DensityStats] = {}
    x_all = dataset.x.astype(np.float32)
    for start in range(0, len(dataset), batch_size):
        xb, yb = x_all[start : start + batch_size], dataset.y[start : start + batch_size]
        trace, cache = OpTrace(), ForwardCache()
        run_forward(net, mats, xb, taus=taus, trace=trace, cache=cache)
        grads = backprop(net, mats, cache, yb, lambda_l1=lambda_l1, instrument=True)
        for layer, s in forward_density(trace).items():
            fwd[layer] = fwd.get(layer, DensityStats(0, 0)) + s
        for layer, s in measure_backward_density(grads.records).items():
            bwd[layer] = bwd.get(layer, DensityStats(0, 0)) + s
    return SparsityReport(net, fwd, bwd)
