"""Design-space exploration: single-dimension sweeps with thermal regulation.

Each sweep point derives a config from the base, runs frequency regulation
against a power model, autotunes the probe workload's tiling, simulates it,
and records one CSV row. Points that fail regulation or have no feasible
tiling are recorded with their flag rather than dropped. Rows are keyed by
(dimension, value) so parallel evaluation yields the same file as serial.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math

from .arch import ArchConfig, validate
from .kerneldsl.checker import typecheck
from .orchestrator import ComputeOp, simulate_compute
from .thermal import RegulationResult, regulate
from .tiler import TilerError, autotune, infer_placement
from .workloads import load_kernel

SWEEP_DIMENSIONS = (
    "interleave_x", "channels", "logical_row", "bandwidth_alloc",
    "sram", "matrix_vector_ratio", "link_width",
)


class SweepError(ValueError):
    pass


def apply_dimension(base: ArchConfig, dimension: str, value) -> ArchConfig:
    """Derive a config with one swept parameter changed.

    Capacity-neutral rules: the channel sweep rescales the physical-bank row
    count R so core capacity is constant; the logical-row sweep rescales R
    against the changed row width C. matrix_vector_ratio redistributes the
    summed TFLOPS between the two engines at the given matrix:vector ratio.
    """
    r = dataclasses.replace
    if dimension == "interleave_x":
        return r(base, channel=r(base.channel, interleave_log2=int(value)))
    if dimension == "channels":
        ch = int(value)
        scaled = base.lb.R * base.core.channels
        if scaled % ch:
            raise SweepError(f"cannot hold capacity: R*channels={scaled} "
                             f"not divisible by {ch}")
        return r(base, core=r(base.core, channels=ch),
                 lb=r(base.lb, R=scaled // ch))
    if dimension == "logical_row":
        row_bytes = int(value)
        if row_bytes % base.pb.row_size_bytes:
            raise SweepError(f"logical row {row_bytes} not a multiple of the "
                             f"{base.pb.row_size_bytes}-byte physical row")
        c = row_bytes // base.pb.row_size_bytes
        scaled = base.lb.R * base.lb.C
        if scaled % c:
            raise SweepError(f"cannot hold capacity: R*C={scaled} not divisible by {c}")
        return r(base, lb=r(base.lb, C=c, R=scaled // c))
    if dimension == "bandwidth_alloc":
        return r(base, channel=r(base.channel, io_pins=int(value)))
    if dimension == "sram":
        return r(base, core=r(base.core, sram_bytes=int(value)))
    if dimension == "matrix_vector_ratio":
        ratio = float(value)
        total = base.core.matrix_tflops + base.core.vector_tflops
        matrix = total * ratio / (ratio + 1.0)
        return r(base, core=r(base.core, matrix_tflops=matrix,
                              vector_tflops=total - matrix))
    if dimension == "link_width":
        # Flits are link-width sized: a wider link moves a packet in fewer
        # flit cycles.
        width = int(value)
        return r(base, noc=r(base.noc, link_bytes_per_cycle=width, flit_bytes=width))
    raise SweepError(f"unknown sweep dimension {dimension!r} "
                     f"(expected one of {SWEEP_DIMENSIONS})")


def default_power_model(cfg: ArchConfig):
    """Chip power vs frequency: compute scales linearly with clock, DRAM
    power follows peak bandwidth at the configured pJ/bit."""
    cores = cfg.noc.cores
    base_freq = cfg.core.frequency_ghz
    compute_peak = (cfg.core.matrix_tflops + cfg.core.vector_tflops) \
        * cfg.energy.flop_pj * cores  # TFLOPS * pJ/FLOP = W
    core_gbps = cfg.channel.io_pins * cfg.channel.pin_rate_gbps / 8.0 * cfg.core.channels
    dram_w = core_gbps * cores * 8 * cfg.energy.dram_pj_per_bit * 1e-3

    def model(freq_ghz: float):
        return compute_peak * freq_ghz / base_freq, dram_w

    return model


# Small probe GEMM so a full sweep stays interactive; tM is prebound to keep
# the candidate space to the (tN, tK) plane.
PROBE_SHAPE = {"M": 8, "K": 32, "N": 32, "tM": 8}

CSV_FIELDS = ("dimension", "value", "frequency_ghz", "peak_temperature_c",
              "thermally_feasible", "tiling", "cycles", "seconds",
              "dram_utilization", "row_hit_rate", "energy_j", "status")


def evaluate_point(cfg: ArchConfig, power_model=None,
                   thermal_resolution: int = 16) -> dict:
    """Regulate, autotune the probe GEMM, simulate; one result record."""
    problems = validate(cfg)
    if problems:
        return {"status": "invalid: " + problems[0]}
    reg: RegulationResult = regulate(cfg, power_model or default_power_model(cfg),
                                     resolution=thermal_resolution)
    cfg = dataclasses.replace(cfg, core=dataclasses.replace(
        cfg.core, frequency_ghz=reg.frequency_ghz))
    prog = load_kernel("matmul")

    def sim_latency(checked, desc):
        return simulate_compute(ComputeOp("probe", checked, desc), cfg).cycles

    try:
        tiling, desc = autotune(prog, cfg, dict(PROBE_SHAPE), sim_latency)
    except TilerError as e:
        return {"status": f"no-tiling: {e}",
                "frequency_ghz": reg.frequency_ghz,
                "peak_temperature_c": reg.peak_temperature_c,
                "thermally_feasible": reg.feasible}
    checked = typecheck(prog, cfg, dict(PROBE_SHAPE, **tiling))
    res = simulate_compute(ComputeOp("probe", checked, desc,
                                     infer_placement(checked, cfg)), cfg)
    seconds = res.cycles / (cfg.core.frequency_ghz * 1e9)
    return {
        "frequency_ghz": reg.frequency_ghz,
        "peak_temperature_c": round(reg.peak_temperature_c, 4),
        "thermally_feasible": reg.feasible,
        "tiling": " ".join(f"{k}={v}" for k, v in sorted(tiling.items())),
        "cycles": res.cycles,
        "seconds": f"{seconds:.9e}",
        "dram_utilization": f"{res.dram_utilization:.6f}",
        "row_hit_rate": f"{res.row_hit_rate:.6f}",
        "energy_j": f"{res.energy_j:.9e}",
        "status": "ok" if reg.feasible else "thermal-infeasible",
    }


def _evaluate_star(args):
    cfg, resolution = args
    return evaluate_point(cfg, None, resolution)


def sweep(dimension: str, grid: list, base: ArchConfig,
          power_model=None, thermal_resolution: int = 16,
          workers: int = 1) -> list[dict]:
    """Evaluate every grid point; `workers` > 1 distributes points over
    processes and must produce exactly the serial result."""
    if not grid:
        raise SweepError("sweep grid must be nonempty")
    points = []
    rows = []
    for value in grid:
        record = {"dimension": dimension, "value": value}
        try:
            cfg = apply_dimension(base, dimension, value)
        except SweepError as e:
            record["status"] = f"invalid: {e}"
        points.append((record, cfg if "status" not in record else None))
    todo = [(rec, cfg) for rec, cfg in points if cfg is not None]
    if workers > 1 and power_model is None and todo:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_evaluate_star,
                                  [(cfg, thermal_resolution) for _, cfg in todo]))
    else:
        results = [evaluate_point(cfg, power_model, thermal_resolution)
                   for _, cfg in todo]
    for (rec, _), result in zip(todo, results):
        rec.update(result)
    rows = [rec for rec, _ in points]
    rows.sort(key=lambda r: (r["dimension"], str(r["value"])))
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, restval="")
    w.writeheader()
    for row in rows:
        w.writerow({k: row.get(k, "") for k in CSV_FIELDS})
    return buf.getvalue()


def report(csv_text: str) -> str:
    """Summarize a sweep CSV: per-dimension argmin and speedup columns."""
    reader = csv.DictReader(io.StringIO(csv_text))
    rows = [r for r in reader]
    ok = [r for r in rows if r.get("status") == "ok" and r.get("cycles")]
    if not rows:
        return "empty sweep\n"
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(["dimension", "value", "cycles", "speedup_vs_worst", "best"])
    by_dim: dict[str, list] = {}
    for r in ok:
        by_dim.setdefault(r["dimension"], []).append(r)
    for dim in sorted(by_dim):
        group = by_dim[dim]
        cycles = [int(r["cycles"]) for r in group]
        worst = max(cycles)
        best = min(cycles)
        for r in group:
            c = int(r["cycles"])
            w.writerow([dim, r["value"], c, f"{worst / c:.4f}",
                        "yes" if c == best else ""])
    skipped = len(rows) - len(ok)
    if skipped:
        w.writerow([f"# {skipped} point(s) not ok (flagged in the sweep CSV)"])
    return out.getvalue()


def latency_weighted_average(latencies: dict[str, float]) -> float:
    """Average of per-model latencies weighted by the latencies themselves:
    sum(l_i^2) / sum(l_i). Slow models dominate, matching a wall-clock view
    of a mixed serving pool."""
    total = sum(latencies.values())
    if total == 0:
        return 0.0
    return sum(v * v for v in latencies.values()) / total
