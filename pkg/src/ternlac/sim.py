"""Cycle-approximate model of a zero-skipping PE-grid accelerator.

Output-stationary dataflow: every PE owns ``output_buffers_per_pe`` output
columns at a time, and column groups are dealt to PEs round-robin. A PE only
issues the MACs whose two operands are both nonzero, ``fpus_per_pe`` per
cycle. An mmOp finishes when its busiest PE does.

Only compute and scheduling are timed. Buffer bandwidth and DRAM traffic
are not modelled.
"""

from __future__ import annotations

import dataclasses
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError
from .graph import MMRecord, NetworkSpec, OpTrace, PWRecord, forward
from .quantize import _nz_mask
from .tensor import Tensor

PTWISE_KINDS = ("add_sub", "mul_add", "ternary_select")
MODES = ("train", "infer")

REPORT_HEADER = (
    "layer,op,M,N,K,n_elems,density,nonzero_macs,cycles,dense_flops,eff_flops_per_cycle,"
    "dense_baseline_cycles,speedup,imbalance,throughput_gflops"
)
SWEEP_HEADER = "config,output_buffers_per_pe,target_density," + REPORT_HEADER


@dataclass(frozen=True)
class SimConfig:
    mode: str = "train"
    pe_rows: int = 8
    pe_cols: int = 8
    fpus_per_pe: int = 8
    flops_per_mac: int = 2
    output_buffers_per_pe: int = 8
    ptwise_units_per_pe: int = 8
    freq_hz: float = 500e6
    fill_overhead_cycles: int = 0
    datapath_bits: int = 32

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("pe_rows", "pe_cols", "fpus_per_pe", "flops_per_mac",
                     "output_buffers_per_pe", "ptwise_units_per_pe"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise DomainError(f"{name} must be a positive integer, got {v!r}")
        if not self.freq_hz > 0:
            raise DomainError(f"freq_hz must be positive, got {self.freq_hz}")
        if self.fill_overhead_cycles < 0:
            raise DomainError(f"fill_overhead_cycles must be >= 0, got {self.fill_overhead_cycles}")

    @property
    def num_pes(self) -> int:
        return self.pe_rows * self.pe_cols

    @property
    def total_fpus(self) -> int:
        return self.num_pes * self.fpus_per_pe

    @property
    def peak_flops_per_cycle(self) -> int:
        return self.total_fpus * self.flops_per_mac

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


# 8x8 grids: 512 single-precision MAC units (32-bit), or 256 half-precision
# multiplier/adder pairs (16-bit).
PRESETS = {
    "dlac-train": SimConfig(mode="train", fpus_per_pe=8, ptwise_units_per_pe=8, datapath_bits=32),
    "dlac-infer": SimConfig(mode="infer", fpus_per_pe=4, ptwise_units_per_pe=4, datapath_bits=16),
}
REPORTED_FILL_OVERHEAD = 32


def preset(name: str, **overrides) -> SimConfig:
    if name not in PRESETS:
        raise DomainError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return PRESETS[name].replace(**overrides)


@dataclass
class CycleReport:
    layer: str
    op: str
    M: int
    N: int
    K: int
    n_elems: int
    density: float
    nonzero_macs: int
    cycles: int
    dense_flops: int
    eff_flops_per_cycle: float
    dense_baseline_cycles: int
    speedup: float
    imbalance: float
    throughput_gflops: float
    bound_cycles: int = 0
    efficiency: float = 1.0
    pe_work: np.ndarray | None = field(default=None, repr=False)

    def csv_row(self) -> str:
        vals = [self.layer, self.op, self.M, self.N, self.K, self.n_elems, self.density,
                self.nonzero_macs, self.cycles, self.dense_flops, self.eff_flops_per_cycle,
                self.dense_baseline_cycles, self.speedup, self.imbalance, self.throughput_gflops]
        return ",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in vals)


def _rate(flops: int, cycles: int) -> float:
    return flops / cycles if cycles else 0.0


def perfect_skip_bound(M: int, N: int, K: int, nonzero_macs: int, cfg: SimConfig) -> int:
    """Cycles if every nonzero MAC were spread perfectly over all FPUs."""
    if not 0 <= nonzero_macs <= M * N * K:
        raise DomainError(f"nonzero_macs {nonzero_macs} outside [0, {M * N * K}]")
    return math.ceil(nonzero_macs / cfg.total_fpus) + cfg.fill_overhead_cycles


def schedule_masks(cfg: SimConfig, a_nz: np.ndarray, b_nz: np.ndarray,
                   layer: str = "") -> CycleReport:
    """Schedule ``a @ b`` given the operands' nonzero masks."""
    if cfg.num_pes < 1:
        raise ShapeError("zero-extent PE grid")
    if a_nz.ndim != 2 or b_nz.ndim != 2 or a_nz.shape[1] != b_nz.shape[0]:
        raise ShapeError(f"cannot schedule {list(a_nz.shape)} @ {list(b_nz.shape)}")
    M, K = a_nz.shape
    N = b_nz.shape[1]
    if N < 1:
        raise ShapeError("mmOp needs at least one output column")

    # nonzero MACs feeding output column j: sum_k #{i: a[i,k] != 0} * [b[k,j] != 0]
    col_work = a_nz.sum(axis=0, dtype=np.int64) @ b_nz.astype(np.int64)
    pe_of_col = (np.arange(N) // cfg.output_buffers_per_pe) % cfg.num_pes
    pe_work = np.zeros(cfg.num_pes, dtype=np.int64)
    np.add.at(pe_work, pe_of_col, col_work)

    nonzero = int(col_work.sum())
    busy = int(-(-pe_work.max() // cfg.fpus_per_pe))
    if M * N >= 1:
        busy = max(busy, 1)
    cycles = cfg.fill_overhead_cycles + busy
    dense_macs = M * N * K
    dense_flops = cfg.flops_per_mac * dense_macs
    baseline = math.ceil(dense_macs / cfg.total_fpus) + cfg.fill_overhead_cycles
    mean_work = pe_work.mean()
    eff = _rate(dense_flops, cycles)
    bound = perfect_skip_bound(M, N, K, nonzero, cfg)
    return CycleReport(
        layer=layer, op="mm", M=M, N=N, K=K, n_elems=M * N,
        density=nonzero / dense_macs if dense_macs else 0.0,
        nonzero_macs=nonzero, cycles=cycles, dense_flops=dense_flops,
        eff_flops_per_cycle=eff, dense_baseline_cycles=baseline,
        speedup=baseline / cycles if cycles else 1.0,
        imbalance=float(pe_work.max() / mean_work) if mean_work else 1.0,
        throughput_gflops=eff * cfg.freq_hz / 1e9,
        bound_cycles=bound, efficiency=bound / cycles if cycles else 1.0,
        pe_work=pe_work,
    )


def schedule_mmop(cfg: SimConfig, a, w, layer: str = "") -> CycleReport:
    """Cycle report for ``a[M x K] @ w[K x N]``.

    ``a`` and ``w`` may be Tensors, TernaryTensors or arrays; only their
    zero patterns matter.
    """
    return schedule_masks(cfg, _nz_mask(a), _nz_mask(w), layer)


def schedule_ptwise(cfg: SimConfig, op_kind: str, n_elems: int, layer: str = "") -> CycleReport:
    """One element per pointwise unit per cycle, whatever the op."""
    if op_kind not in PTWISE_KINDS:
        raise DomainError(f"unknown pointwise op {op_kind!r}; expected one of {PTWISE_KINDS}")
    if n_elems < 0:
        raise DomainError(f"n_elems must be >= 0, got {n_elems}")
    units = cfg.num_pes * cfg.ptwise_units_per_pe
    cycles = -(-n_elems // units)
    eff = _rate(n_elems, cycles)
    return CycleReport(
        layer=layer, op=op_kind, M=0, N=0, K=0, n_elems=n_elems, density=1.0,
        nonzero_macs=0, cycles=cycles, dense_flops=n_elems, eff_flops_per_cycle=eff,
        dense_baseline_cycles=cycles, speedup=1.0, imbalance=1.0,
        throughput_gflops=eff * cfg.freq_hz / 1e9, bound_cycles=cycles,
    )


@dataclass
class SimReport:
    ops: list
    aggregate: CycleReport
    logits: Tensor | None = None

    def mm(self) -> list[CycleReport]:
        return [r for r in self.ops if r.op == "mm"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(REPORT_HEADER + "\n")
        for r in self.ops + [self.aggregate]:
            buf.write(r.csv_row() + "\n")
        return buf.getvalue()


def aggregate(cfg: SimConfig, reports) -> CycleReport:
    reports = list(reports)
    mm = [r for r in reports if r.op == "mm"]
    cycles = sum(r.cycles for r in reports)
    dense_flops = sum(r.dense_flops for r in reports)
    dense_macs = sum(r.M * r.N * r.K for r in mm)
    nonzero = sum(r.nonzero_macs for r in mm)
    baseline = sum(r.dense_baseline_cycles for r in reports)
    eff = _rate(dense_flops, cycles)
    bound = sum(r.bound_cycles for r in reports)
    return CycleReport(
        layer="total", op="all", M=0, N=0, K=0, n_elems=sum(r.n_elems for r in reports),
        density=nonzero / dense_macs if dense_macs else 0.0, nonzero_macs=nonzero,
        cycles=cycles, dense_flops=dense_flops, eff_flops_per_cycle=eff,
        dense_baseline_cycles=baseline, speedup=baseline / cycles if cycles else 1.0,
        imbalance=max((r.imbalance for r in mm), default=1.0),
        throughput_gflops=eff * cfg.freq_hz / 1e9,
        bound_cycles=bound, efficiency=bound / cycles if cycles else 1.0,
    )


def simulate_trace(cfg: SimConfig, trace: OpTrace) -> SimReport:
    """Schedule every record of ``trace`` in order."""
    ops = []
    for rec in trace:
        if isinstance(rec, MMRecord):
            ops.append(schedule_masks(cfg, rec.lhs != 0, rec.rhs != 0, str(rec.layer_id)))
        elif isinstance(rec, PWRecord):
            ops.append(schedule_ptwise(cfg, rec.op_kind, rec.n_elems, str(rec.layer_id)))
        else:  # pragma: no cover
            raise TypeError(f"unknown trace record {rec!r}")
    return SimReport(ops, aggregate(cfg, ops))


def simulate_network(cfg: SimConfig, net: NetworkSpec, weights, x: Tensor, *,
                     relu_tau: float | None = None) -> SimReport:
    """Run ``x`` through ``net`` and time the resulting trace.

    Timing never feeds back into numerics; the returned logits are those of
    :func:`ternlac.graph.forward`.
    """
    fr = forward(net, weights, x, relu_tau=relu_tau)
    report = simulate_trace(cfg, fr.trace)
    report.logits = fr.logits
    return report


# --- synthetic workloads ---------------------------------------------------------


def synthetic_operands(M: int, N: int, K: int, pair_density: float,
                       rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """iid Bernoulli masks, each operand at ``sqrt(pair_density)``.

    The expected fraction of MACs with both operands nonzero is then
    ``pair_density``.
    """
    if not 0.0 <= pair_density <= 1.0:
        raise DomainError(f"density must lie in [0, 1], got {pair_density}")
    p = math.sqrt(pair_density)
    a = rng.random((M, K)) < p
    b = rng.random((K, N)) < p
    return a, b


def synthetic_trace(densities, M: int, N: int, K: int, seed: int = 0) -> OpTrace:
    """One mmOp per entry of ``densities`` with synthetic operand masks."""
    trace = OpTrace()
    for i, d in enumerate(densities):
        a, b = synthetic_operands(M, N, K, d, np.random.default_rng([seed, i]))
        trace.records.append(MMRecord(M, N, K, i, a, b))
    return trace


@dataclass
class SweepRow:
    config: str
    cfg: SimConfig
    target_density: float
    report: CycleReport

    def csv_row(self) -> str:
        return f"{self.config},{self.cfg.output_buffers_per_pe},{self.target_density!r},{self.report.csv_row()}"


def sweep(configs, densities, M: int, N: int, K: int, seed: int = 0) -> list[SweepRow]:
    """Evaluate every (config, density) pair on synthetic masks.

    ``configs`` is a sequence of ``(label, SimConfig)``. Masks depend only
    on ``seed`` and the density's position, so all configs see the same
    operands at a given density.
    """
    configs, densities = list(configs), list(densities)
    if not configs or not densities:
        raise DomainError("sweep needs non-empty config and density grids")
    rows = []
    for label, cfg in configs:
        for j, d in enumerate(densities):
            a, b = synthetic_operands(M, N, K, d, np.random.default_rng([seed, j]))
            rows.append(SweepRow(label, cfg, float(d), schedule_masks(cfg, a, b, "synthetic")))
    return rows


def sweep_csv(rows) -> str:
    return SWEEP_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in rows)
