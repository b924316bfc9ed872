"""Command-line driver: validate configs, inspect kernels, tune, simulate, sweep.

Exit codes: 0 on success, 2 on validation/usage failure.
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources

from . import sweep as sweep_mod
from . import workloads
from .arch import ArchConfig, ArchError, derived_metrics, parse_arch
from .dramsim import DramSystem, stats as dram_stats
from .kerneldsl.checker import TypecheckError, typecheck
from .kerneldsl.parser import KernelSyntaxError, ast_to_json, parse_kernel
from .orchestrator import ComputeOp, run, simulate_compute
from .sweep import default_power_model
from .thermal import regulate
from .tiler import TilerError, autotune, generate_execution, infer_placement
from .workloads import (
    DecodingScenario, PagedKvLayout, WorkloadError, build_decoding_graph,
    load_model,
)


def _load_config(path: str | None) -> ArchConfig:
    if path is None:
        text = resources.files("stacksim").joinpath("configs/default.yaml").read_text()
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    return parse_arch(text)


def _load_kernel_arg(arg: str):
    """A --kernel value is a file path if it exists, else a shipped kernel name."""
    import os
    if os.path.exists(arg):
        with open(arg, encoding="utf-8") as f:
            return parse_kernel(f.read())
    return workloads.load_kernel(arg)


def _parse_bindings(pairs: list[str]) -> dict[str, int]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"binding {pair!r} is not name=value")
        name, value = pair.split("=", 1)
        out[name.strip()] = int(value)
    return out


def _write_out(text: str, out: str | None):
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_validate(args) -> int:
    cfg = _load_config(args.config)
    d = derived_metrics(cfg)
    print(f"config ok: {cfg.core.channels} ch/core @ {d.channel_gbps:.1f} GB/s "
          f"({d.core_gbps:.0f} GB/s/core), core capacity "
          f"{d.core_capacity_bytes / 2**20:.0f} MiB, "
          f"logical row {d.logical_row_bytes} B")
    return 0


def cmd_parse(args) -> int:
    prog = _load_kernel_arg(args.kernel)
    if args.dump_ast:
        _write_out(ast_to_json(prog) + "\n", args.out)
    else:
        print(f"kernel {prog.name}({', '.join(prog.params)}): ok")
    if args.bind:
        cfg = _load_config(args.config)
        typecheck(prog, cfg, _parse_bindings(args.bind))
        print("typecheck: ok")
    return 0


def cmd_tune(args) -> int:
    cfg = _load_config(args.config)
    prog = _load_kernel_arg(args.kernel)
    bindings = _parse_bindings(args.bind)

    def sim_latency(checked, desc):
        return simulate_compute(ComputeOp(prog.name, checked, desc), cfg).cycles

    tiling, desc = autotune(prog, cfg, bindings, sim_latency, limit=args.limit)
    print("best tiling: " + " ".join(f"{k}={v}" for k, v in sorted(tiling.items())))
    if args.out:
        _write_out(desc.serialize(), args.out)
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    if args.model:
        model = load_model(args.model)
        scen = DecodingScenario(batch=args.batch, context=args.context,
                                tp=args.tp, ep=args.ep)
        ops = build_decoding_graph(model, scen, cfg, layers=args.layers)
    else:
        if not args.kernel:
            print("simulate needs --model or --kernel", file=sys.stderr)
            return 2
        prog = _load_kernel_arg(args.kernel)
        checked = typecheck(prog, cfg, _parse_bindings(args.bind))
        desc = generate_execution(checked, cfg)
        ops = [ComputeOp(prog.name, checked, desc, infer_placement(checked, cfg))]
    if args.regulate:
        import dataclasses
        reg = regulate(cfg, default_power_model(cfg), resolution=16)
        cfg = dataclasses.replace(cfg, core=dataclasses.replace(
            cfg.core, frequency_ghz=reg.frequency_ghz))
        report = run(ops, cfg)
        report.peak_temperature_c = reg.peak_temperature_c
    else:
        report = run(ops, cfg)
    print(f"{len(report.operators)} operator(s), {report.cycles} cycles, "
          f"{report.seconds * 1e6:.3f} us @ {report.frequency_ghz:.2f} GHz, "
          f"{report.total_energy_j * 1e3:.4f} mJ")
    if report.peak_temperature_c is not None:
        print(f"peak temperature: {report.peak_temperature_c:.1f} C")
    if args.out:
        _write_out(report.to_csv(), args.out)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    grid = [float(v) if "." in v else int(v) for v in args.grid]
    rows = sweep_mod.sweep(args.dimension, grid, cfg,
                           thermal_resolution=args.thermal_resolution)
    _write_out(sweep_mod.rows_to_csv(rows), args.out)
    return 0


def cmd_trace_gen(args) -> int:
    cfg = _load_config(args.config)
    if args.kind == "gemm_tile":
        reqs = workloads.gen_gemm_benchmark(cfg, M=args.m, K=args.k, N=args.n)
        _write_out(workloads.serialize_trace(reqs), args.out)
        if args.run:
            system = DramSystem(cfg)
            system.run(reqs)
            d = dram_stats(system)
            print(f"utilization {d['utilization']:.4f}, "
                  f"row hit rate {d['row_hit_rate']:.4f}")
    else:
        layout = PagedKvLayout(args.blocks, args.slots, args.kv_bytes)
        runs = workloads.gen_paged_attention_benchmark(
            cfg, layout, args.context, seed=args.seed, runs=args.runs)
        text = "".join(f"# run {i}\n" + workloads.serialize_trace(r)
                       for i, r in enumerate(runs))
        _write_out(text, args.out)
        if args.run:
            utils = []
            for reqs in runs:
                system = DramSystem(cfg)
                system.run(reqs)
                utils.append(dram_stats(system)["utilization"])
            print(f"mean utilization over {len(runs)} runs: "
                  f"{sum(utils) / len(utils):.4f}")
    return 0


def cmd_report(args) -> int:
    with open(args.csv, encoding="utf-8") as f:
        _write_out(sweep_mod.report(f.read()), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stacksim")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p, kernel=False):
        p.add_argument("--config", help="architecture YAML (default: built-in cloud config)")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--seed", type=int, default=0)
        if kernel:
            p.add_argument("--kernel", help="kernel file path or shipped kernel name")
            p.add_argument("--bind", nargs="*", default=[], metavar="NAME=VALUE")

    p = sub.add_parser("validate", help="parse and validate a config")
    common(p)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("parse", help="parse (and optionally typecheck) a kernel")
    common(p, kernel=True)
    p.add_argument("--dump-ast", action="store_true")
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("tune", help="autotune kernel tiling")
    common(p, kernel=True)
    p.add_argument("--limit", type=int, default=256)
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("simulate", help="simulate a kernel or a decoding step")
    common(p, kernel=True)
    p.add_argument("--model", help="shipped model name (e.g. llama3-70b)")
    p.add_argument("--layers", type=int, help="override model layer count")
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--context", type=int, default=1024)
    p.add_argument("--tp", type=int, default=1)
    p.add_argument("--ep", type=int, default=1)
    p.add_argument("--regulate", action="store_true",
                   help="apply thermal frequency regulation first")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("sweep", help="sweep one architecture dimension")
    common(p)
    p.add_argument("dimension", choices=sweep_mod.SWEEP_DIMENSIONS)
    p.add_argument("grid", nargs="+")
    p.add_argument("--thermal-resolution", type=int, default=16)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("trace-gen", help="generate DRAM benchmark traces")
    common(p)
    p.add_argument("kind", choices=("gemm_tile", "paged_attention"))
    p.add_argument("--m", type=int, default=64)
    p.add_argument("--k", type=int, default=8192)
    p.add_argument("--n", type=int, default=8192)
    p.add_argument("--blocks", type=int, default=64)
    p.add_argument("--slots", type=int, default=16)
    p.add_argument("--kv-bytes", type=int, default=256)
    p.add_argument("--context", type=int, default=1024)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--run", action="store_true",
                   help="also simulate the trace and print utilization")
    p.set_defaults(fn=cmd_trace_gen)

    p = sub.add_parser("report", help="summarize a sweep CSV")
    common(p)
    p.add_argument("csv")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ArchError, KernelSyntaxError, TypecheckError, TilerError,
            WorkloadError, sweep_mod.SweepError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
