"""ternlac command line.

Every run first prints its resolved configuration as ``config <key>=<value>``
lines, then stable ``key=value`` summary lines. Options not declared by a
subcommand may be given as ``--key=value`` overrides of the train or
simulator configuration (flags win over config files).

Exit codes: 0 success, 2 usage error, 3 input/format error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import data as datagen
from . import schema
from .errors import (
    CorruptionError,
    DegenerateInputError,
    DivergenceError,
    DomainError,
    FormatError,
    SchemaError,
    ShapeError,
)
from .graph import MMRecord, forward
from .models import BUILTIN
from .quantize import ThresholdPolicy, ternarize
from .sim import (
    REPORTED_FILL_OVERHEAD,
    simulate_network,
    simulate_trace,
    sweep,
    sweep_csv,
    synthetic_trace,
)
from .tensor import FP16SIM, Tensor, TernaryTensor
from .tensorio import atomic_write, load_tensor, save_any
from .train import sparsity_report, train

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4
TRACE_HEADER = "index,layer,kind,op,M,N,K,n_elems,density"

log = logging.getLogger("ternlac")


class UsageError(Exception):
    pass


_OVERRIDE = re.compile(r"^--([A-Za-z][\w.-]*)=(.*)$")


def parse_value(text: str):
    """Scalar from an override string: int, float, bool, null, else the string."""
    low = text.strip().lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("null", "none"):
        return None
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_overrides(tokens, allowed, aliases=None) -> dict:
    """``--key=value`` tokens to a dict of canonical keys; anything else is a usage error."""
    out = {}
    for tok in tokens:
        m = _OVERRIDE.match(tok)
        if not m:
            raise UsageError(f"unrecognized argument {tok!r} (overrides take the form --key=value)")
        key = schema.canonical_key(m.group(1), aliases)
        if key not in allowed:
            raise UsageError(f"unknown option --{m.group(1)}; known keys: {', '.join(sorted(allowed))}")
        out[key] = parse_value(m.group(2))
    return out


def echo_config(items: dict):
    for k, v in items.items():
        print(f"config {k}={v}")


def _fmt(v) -> str:
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def summary(**kv):
    print(" ".join(f"{k}={_fmt(v)}" for k, v in kv.items()))


def _list_arg(text: str, conv=float) -> list:
    try:
        vals = [conv(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None
    if not vals:
        raise UsageError("empty list")
    return vals


def _load_net(ref: str, load_weights: bool = True):
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        if name not in BUILTIN:
            raise UsageError(f"unknown builtin network {name!r}; expected one of {sorted(BUILTIN)}")
        return BUILTIN[name](), {}
    return schema.load_network(ref, load_weights=load_weights)


def _dataset(args, net=None):
    if args.data:
        return schema.load_dataset(args.data)
    kind = args.dataset
    if kind is None:
        kind = "conv8x8" if net is not None and len(net.input_shape) == 3 else "blobs"
    return datagen.make(kind, n=args.n, classes=args.classes, seed=args.data_seed)


# --- subcommands ---------------------------------------------------------------------


def cmd_quantize(args, extra):
    ov = parse_overrides(extra, {"threshold", "threshold_kind"}, {"t": "threshold", "kind": "threshold_kind"})
    kind = ov.get("threshold_kind", args.threshold_kind)
    value = ov.get("threshold", args.threshold)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise UsageError(f"threshold must be a number, got {value!r}")
    policy = ThresholdPolicy(kind, float(value))
    echo_config({"command": "quantize", "input": args.input, "out": args.out, "policy": policy})
    w = load_tensor(args.input)
    tern, w_th = ternarize(w, policy)
    save_any(args.out, tern)
    n = w.size
    zeros = int(np.count_nonzero(tern.values == 0))
    fp32_bytes, tern_bytes = 4 * n, len(tern.codes)
    summary(w_th=w_th, elements=n, zero_fraction=zeros / n if n else 0.0,
            fp32_bytes=fp32_bytes, tern_bytes=tern_bytes,
            reduction=fp32_bytes / tern_bytes if tern_bytes else 0.0,
            file_bytes=Path(args.out).stat().st_size)
    return EXIT_OK


def _trace_csv(trace) -> str:
    rows = [TRACE_HEADER]
    for k, r in enumerate(trace):
        if isinstance(r, MMRecord):
            nz = int(np.count_nonzero(r.lhs != 0, axis=0) @ np.count_nonzero(r.rhs != 0, axis=1))
            dens = nz / (r.M * r.N * r.K) if r.M * r.N * r.K else 0.0
            rows.append(f"{k},{r.layer_id},MM,mm,{r.M},{r.N},{r.K},{r.M * r.N},{dens!r}")
        else:
            rows.append(f"{k},{r.layer_id},PW,{r.op_kind},0,0,0,{r.n_elems},1.0")
    return "\n".join(rows) + "\n"


def cmd_infer(args, extra):
    ov = parse_overrides(extra, {"relu_tau"}, {"tau": "relu_tau"})
    tau = ov.get("relu_tau", args.relu_tau)
    echo_config({"command": "infer", "net": args.net, "input": args.input, "out": args.out,
                 "trace": args.trace, "relu_tau": tau})
    net, weights = _load_net(args.net)
    x = load_tensor(args.input)
    result = forward(net, weights, x, relu_tau=tau)
    save_any(args.out, result.logits)
    if args.trace:
        atomic_write(args.trace, _trace_csv(result.trace))
    mm = len(result.trace.mm())
    summary(logits_shape="x".join(map(str, result.logits.shape)), dtype=result.logits.dtype,
            records=len(result.trace), mm=mm, pw=len(result.trace) - mm,
            dense_flops=result.trace.dense_flops())
    return EXIT_OK


def _init_from(net, weights, masters):
    init = {}
    for i in net.param_layers():
        if i in masters:
            init[i] = masters[i].data
        elif i in weights:
            w = weights[i]
            init[i] = w.values.astype(np.float32) if isinstance(w, TernaryTensor) else w.data
        else:
            return None
    return init


def _scratch_path(p: str) -> str:
    path = Path(p)
    return str(path.with_name(path.stem + ".scratch" + path.suffix))


def cmd_train(args, extra):
    ov = parse_overrides(extra, set(schema.train_config_keys()), schema.TRAIN_ALIASES)
    flat = schema.read_train_config_flat(args.config) if args.config else {}
    flat.update(ov)
    try:
        cfg = schema.train_config_from_flat(flat)
    except SchemaError as e:
        if e.path in ov:
            raise UsageError(str(e)) from None
        raise
    net, weights = _load_net(args.net)
    masters = schema.load_masters(Path(args.net).parent, net) if not args.net.startswith("builtin:") else {}
    init = _init_from(net, weights, masters) if weights else None
    ds = _dataset(args, net)
    echo_config({"command": "train", "net": args.net, "dataset": ds.name, "samples": len(ds),
                 "out": args.out, "log": args.log, **_cfg_items(cfg)})
    runs = [("preinit" if cfg.epochs_full_precision else "run", cfg, args.log)]
    if args.compare_scratch:
        runs.append(("scratch", cfg.replace(epochs_full_precision=0),
                     _scratch_path(args.log) if args.log else None))
    for label, c, log_path in runs:
        try:
            result = train(net, c, ds, init=init)
        except DivergenceError as e:
            print(f"error: training diverged ({e})", file=sys.stderr)
            return EXIT_NUMERIC
        last = result.log.epochs[-1] if result.log.epochs else None
        if log_path:
            atomic_write(log_path, result.log.to_csv())
        if args.out and label != "scratch":
            schema.save_checkpoint(args.out, result, c)
        if last is None:
            summary(run=label, epochs=0)
            continue
        summary(run=label, epochs=len(result.log), final_error=last.train_error, final_lr=last.lr,
                fwd_density=last.fwd_total().density, bwd_density=last.bwd_total().density,
                skipped_steps=sum(e.skipped_steps for e in result.log.epochs))
    return EXIT_OK


def _cfg_items(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        out[f.name] = getattr(cfg, f.name)
    return out


def _sim_config(args, extra):
    ov = parse_overrides(extra, set(schema.sim_config_keys()), {"fill": "fill_overhead_cycles",
                                                                "buffers": "output_buffers_per_pe"})
    flat = {"preset": "dlac-train", "fill_overhead_cycles": REPORTED_FILL_OVERHEAD}
    if args.config:
        doc = schema.read_yaml(args.config)
        schema.check_schema(doc)
        flat.update({k: v for k, v in doc.items() if k != "schema"})
    flat.update(ov)
    try:
        return schema.sim_config_from_flat(flat)
    except SchemaError as e:
        if e.path in ov:
            raise UsageError(str(e)) from None
        raise


def cmd_simulate(args, extra):
    cfg = _sim_config(args, extra)
    if args.synthetic:
        densities = _list_arg(args.synthetic)
        echo_config({"command": "simulate", "synthetic": densities, "M": args.M, "N": args.N,
                     "K": args.K, "seed": args.seed, "out": args.out, **_cfg_items(cfg)})
        report = simulate_trace(cfg, synthetic_trace(densities, args.M, args.N, args.K, args.seed))
    else:
        if not args.net or not args.input:
            raise UsageError("simulate needs --net and --input, or --synthetic")
        echo_config({"command": "simulate", "net": args.net, "input": args.input, "out": args.out,
                     "relu_tau": args.relu_tau, **_cfg_items(cfg)})
        net, weights = _load_net(args.net)
        x = load_tensor(args.input)
        if cfg.mode == "infer" and x.dtype != FP16SIM:
            x = Tensor.fp16(x.data)
            weights = {i: (Tensor.fp16(w.data) if isinstance(w, Tensor) else w) for i, w in weights.items()}
        report = simulate_network(cfg, net, weights, x, relu_tau=args.relu_tau)
    atomic_write(args.out, report.to_csv())
    for r in report.mm():
        summary(layer=r.layer, op=r.op, density=r.density, cycles=r.cycles, speedup=r.speedup,
                eff_flops_per_cycle=r.eff_flops_per_cycle, imbalance=r.imbalance)
    a = report.aggregate
    summary(layer="total", cycles=a.cycles, speedup=a.speedup, eff_flops_per_cycle=a.eff_flops_per_cycle,
            throughput_gflops=a.throughput_gflops, freq_mhz=cfg.freq_hz / 1e6)
    print("note=compute and scheduling only; buffer bandwidth and DRAM traffic are not timed")
    return EXIT_OK


def cmd_sweep(args, extra):
    cfg = _sim_config(args, extra)
    densities = _list_arg(args.densities)
    buffers = _list_arg(args.buffers, int)
    if any(b <= 0 for b in buffers):
        raise UsageError("buffer counts must be positive")
    grid = [(f"b{b}", cfg.replace(output_buffers_per_pe=b)) for b in buffers]
    echo_config({"command": "sweep", "densities": densities, "buffers": buffers, "M": args.M,
                 "N": args.N, "K": args.K, "seed": args.seed, "out": args.out, **_cfg_items(cfg)})
    rows = sweep(grid, densities, args.M, args.N, args.K, seed=args.seed)
    atomic_write(args.out, sweep_csv(rows))
    for r in rows:
        summary(config=r.config, density=r.target_density, speedup=r.report.speedup,
                eff_flops_per_cycle=r.report.eff_flops_per_cycle)
    return EXIT_OK


def cmd_gen(args, extra):
    parse_overrides(extra, set())
    echo_config({"command": "gen", "kind": args.kind, "out": args.out, "n": args.n,
                 "classes": args.classes, "seed": args.seed, "shape": args.shape,
                 "density": args.density, "scale": args.scale})
    if args.kind == "random-tensor":
        shape = _list_arg(args.shape, int)
        if not 1 <= len(shape) <= 4 or any(d <= 0 for d in shape):
            raise UsageError(f"shape must have 1-4 positive extents, got {shape}")
        arr = datagen.random_tensor(shape, args.density, args.seed, args.scale)
        save_any(args.out, Tensor(arr))
        summary(wrote=args.out, elements=arr.size, density=np.count_nonzero(arr) / arr.size)
        return EXIT_OK
    ds = datagen.make(args.kind, n=args.n, classes=args.classes, seed=args.seed)
    schema.save_dataset(args.out, ds)
    counts = np.bincount(ds.y, minlength=ds.classes)
    summary(wrote=args.out, n=len(ds), classes=ds.classes, class_counts=",".join(map(str, counts)),
            sample_shape="x".join(map(str, ds.sample_shape)))
    return EXIT_OK


def cmd_report(args, extra):
    ov = parse_overrides(extra, {"relu_tau", "lambda_l1"}, {"tau": "relu_tau", "lambda": "lambda_l1"})
    tau = ov.get("relu_tau", args.relu_tau)
    lam = ov.get("lambda_l1", 0.0)
    net, weights = _load_net(args.net)
    ds = _dataset(args, net)
    echo_config({"command": "report", "net": args.net, "dataset": ds.name, "samples": len(ds),
                 "relu_tau": tau, "lambda_l1": lam, "out": args.out})
    rep = sparsity_report(net, weights, ds, relu_tau=tau, lambda_l1=lam)
    atomic_write(args.out, rep.to_csv())
    f, b = rep.totals()
    summary(fwd_density=f.density, bwd_density=b.density, layers=len(rep.fwd))
    return EXIT_OK


# --- parser ----------------------------------------------------------------------------


def _add_data_args(p):
    p.add_argument("--data", help="dataset directory written by 'gen'")
    p.add_argument("--dataset", choices=datagen.KINDS, help="generate a built-in dataset in memory")
    p.add_argument("--n", type=int, default=None, help="samples for --dataset")
    p.add_argument("--classes", type=int, default=None, help="classes for --dataset")
    p.add_argument("--data-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ternlac",
        allow_abbrev=False,
        description="Ternary quantization, training and zero-skipping accelerator simulation.",
        epilog="Output: 'config key=value' lines echo the resolved configuration, then "
               "space-separated key=value summary lines. Exit codes: 0 ok, 2 usage, "
               "3 input/format error, 4 training divergence.",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("quantize", allow_abbrev=False, help="ternarize a TNSR tensor into a TERN file",
                       description="Prints w_th, zero_fraction and fp32/TERN payload sizes.")
    q.add_argument("input")
    q.add_argument("--out", required=True)
    q.add_argument("--threshold-kind", choices=("mean_scaled", "fixed"), default="mean_scaled")
    q.add_argument("--threshold", type=float, default=0.7,
                   help="factor on mean |W| (mean_scaled) or the threshold itself (fixed)")
    q.set_defaults(func=cmd_quantize)

    i = sub.add_parser("infer", allow_abbrev=False, help="forward a TNSR batch through a network",
                       description="Writes logits as TNSR; --trace dumps the op trace as CSV.")
    i.add_argument("--net", required=True, help="network YAML or builtin:<name>")
    i.add_argument("--input", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--trace")
    i.add_argument("--relu-tau", type=float, default=None)
    i.set_defaults(func=cmd_infer)

    t = sub.add_parser("train", allow_abbrev=False, help="train a network; writes a checkpoint and the epoch log",
                       description="Extra --key=value flags override the training config "
                                   "(e.g. --epochs=30 --epochs-fp=all --seed=3).")
    t.add_argument("--net", required=True, help="network YAML or builtin:<name>")
    t.add_argument("--config", help="training config YAML")
    _add_data_args(t)
    t.add_argument("--out", help="checkpoint directory")
    t.add_argument("--log", help="epoch log CSV")
    t.add_argument("--compare-scratch", action="store_true",
                   help="also train without pre-initialization; log goes to <log>.scratch.csv")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("simulate", allow_abbrev=False, help="cycle report for a network run or synthetic layers",
                       description="Extra --key=value flags override the simulator config "
                                   "(e.g. --preset=dlac-infer --fill_overhead_cycles=0).")
    s.add_argument("--net")
    s.add_argument("--input")
    s.add_argument("--relu-tau", type=float, default=None)
    s.add_argument("--synthetic", help="comma-separated pair densities, one mmOp each")
    s.add_argument("--M", type=int, default=64)
    s.add_argument("--N", type=int, default=1024)
    s.add_argument("--K", type=int, default=576)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", help="simulator config YAML")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", allow_abbrev=False, help="density x buffer-count grid on synthetic masks")
    w.add_argument("--densities", default="1.0,0.5,0.3,0.2,0.1")
    w.add_argument("--buffers", default="8")
    w.add_argument("--M", type=int, default=64)
    w.add_argument("--N", type=int, default=1024)
    w.add_argument("--K", type=int, default=576)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--config", help="simulator config YAML")
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gen", allow_abbrev=False, help="write a synthetic dataset directory or random TNSR")
    g.add_argument("kind", choices=(*datagen.KINDS, "random-tensor"))
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=None)
    g.add_argument("--classes", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--shape", default="1000", help="random-tensor extents, comma-separated")
    g.add_argument("--density", type=float, default=1.0)
    g.add_argument("--scale", type=float, default=1.0)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("report", allow_abbrev=False, help="per-layer forward/backward pair densities as CSV")
    r.add_argument("--net", required=True, help="network YAML with weights (e.g. a checkpoint)")
    _add_data_args(r)
    r.add_argument("--relu-tau", type=float, default=None)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)  # argparse itself exits 2 on usage errors
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, extra)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as e:
        print(f"error: invalid value: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as e:
        print(f"error: file not found: {e.filename}", file=sys.stderr)
        return EXIT_FORMAT
    except (FormatError, CorruptionError, SchemaError, ShapeError, DegenerateInputError,
            KeyError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {type(e).__name__}: {msg}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
