"""Ternary weight quantization, a small training engine and a zero-skipping accelerator model."""

from .errors import (
    CorruptionError,
    DegenerateInputError,
    DivergenceError,
    DomainError,
    FormatError,
    SchemaError,
    ShapeError,
    TernlacError,
)
from .graph import (
    BatchNormInf,
    Conv2d,
    FullyConnected,
    NetworkSpec,
    OpTrace,
    ReLUT,
    SoftmaxXent,
    conv2d_direct,
    fold_batchnorm,
    forward,
    im2col,
)
from .half import f16_to_f32, f32_to_f16
from .quantize import ThresholdPolicy, pair_density, relu_threshold, ternarize
from .schema import load_network, save_network
from .sim import (
    CycleReport,
    SimConfig,
    perfect_skip_bound,
    preset,
    schedule_mmop,
    schedule_ptwise,
    simulate_network,
    sweep,
)
from .tensor import (
    DensityStats,
    Tensor,
    TernaryTensor,
    density,
    matmul,
    pack_ternary,
    ternary_matmul,
    unpack_ternary,
)
from .tensorio import load_any, save_any
from .train import (
    TrainConfig,
    TrainLog,
    backward,
    finetune_from,
    grad_update_filter,
    lr_schedule_step,
    measure_backward_density,
    sparsity_report,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BatchNormInf",
    "Conv2d",
    "CorruptionError",
    "CycleReport",
    "DegenerateInputError",
    "DensityStats",
    "DivergenceError",
    "DomainError",
    "FormatError",
    "FullyConnected",
    "NetworkSpec",
    "OpTrace",
    "ReLUT",
    "SchemaError",
    "ShapeError",
    "SimConfig",
    "SoftmaxXent",
    "Tensor",
    "TernaryTensor",
    "TernlacError",
    "ThresholdPolicy",
    "TrainConfig",
    "TrainLog",
    "backward",
    "conv2d_direct",
    "density",
    "f16_to_f32",
    "f32_to_f16",
    "finetune_from",
    "fold_batchnorm",
    "forward",
    "grad_update_filter",
    "im2col",
    "load_any",
    "load_network",
    "lr_schedule_step",
    "matmul",
    "measure_backward_density",
    "pack_ternary",
    "pair_density",
    "perfect_skip_bound",
    "preset",
    "relu_threshold",
    "save_any",
    "save_network",
    "schedule_mmop",
    "schedule_ptwise",
    "simulate_network",
    "sparsity_report",
    "sweep",
    "ternarize",
    "ternary_matmul",
    "train",
    "unpack_ternary",
]
