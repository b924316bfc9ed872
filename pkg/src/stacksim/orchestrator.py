"""Whole-chip simulation driver.

Runs an operator graph on one accelerator: compute operators execute their
pipelined execution description on a representative core (all cores run the
same program on equally sized shards), collectives replay their explicit
send/recv schedules on the mesh, and inter-accelerator transfers use the
analytic link model. Operators are separated by global barriers; inside an
operator, each pipeline iteration advances time by the slowest engine, so
overlapped loads and compute cost max(load, compute) rather than their sum.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

from .arch import ArchConfig
from .dramsim import DramSystem, Request, schedule_tile, stats as dram_stats
from .kerneldsl.checker import CheckedProgram
from .kerneldsl.trace import (
    DramRead, DramWrite, MatrixWork, RecvEvent, SendEvent, VectorWork,
)
from .logicsim import matrix_cost, vector_cost
from .nocsim import run_plan
from .partition import CommPlan, CoreArray
from .tiler import ExecutionDescription, TensorPlacement, infer_placement


@dataclass(frozen=True)
class ComputeOp:
    """One kernel invocation, identical on every core (SPMD)."""
    name: str
    checked: CheckedProgram
    desc: ExecutionDescription
    placement: TensorPlacement | None = None


@dataclass(frozen=True)
class CollectiveOp:
    name: str
    kind: str  # ring_reduce_scatter / ring_all_gather / all_reduce_1d / all_reduce_2d
    plan: CommPlan
    array: CoreArray


@dataclass(frozen=True)
class InterAccelOp:
    """Transfer over the accelerator-to-accelerator link (both directions)."""
    name: str
    bytes: int


@dataclass
class OperatorResult:
    name: str
    kind: str
    cycles: int
    dram_bytes: int = 0
    matrix_flops: int = 0
    vector_flops: int = 0
    noc_bytes_hops: int = 0
    utilization: float = 1.0
    dram_utilization: float = 0.0
    row_hit_rate: float = 0.0
    energy_j: float = 0.0


@dataclass
class SimReport:
    cycles: int
    seconds: float
    operators: list
    energy_j: dict  # component -> joules
    frequency_ghz: float = 0.0
    peak_temperature_c: float | None = None

    @property
    def total_energy_j(self) -> float:
        return sum(self.energy_j.values())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["operator", "kind", "cycles", "dram_bytes", "matrix_flops",
                    "vector_flops", "utilization", "dram_utilization",
                    "row_hit_rate", "energy_j"])
        for op in self.operators:
            w.writerow([op.name, op.kind, op.cycles, op.dram_bytes,
                        op.matrix_flops, op.vector_flops,
                        f"{op.utilization:.6f}", f"{op.dram_utilization:.6f}",
                        f"{op.row_hit_rate:.6f}", f"{op.energy_j:.9e}"])
        w.writerow(["total", "", self.cycles, "", "", "", "", "", "",
                    f"{self.total_energy_j:.9e}"])
        return buf.getvalue()


def _dram_requests(events, placement: TensorPlacement, ready: int) -> list[Request]:
    reqs = []
    for e in events:
        base = placement.tensors[e.tensor].base_address
        kind = "R" if isinstance(e, DramRead) else "W"
        for off, length in e.ranges:
            reqs.append(Request(ready, kind, base + off, length))
    return reqs


def roofline_cycles(checked: CheckedProgram, desc: ExecutionDescription) -> int:
    """Lower bound: max of pure compute time and pure DRAM-transfer time."""
    cfg = checked.cfg
    core = cfg.core
    m_flops = v_flops = dram_bytes = 0
    for op in desc.operators:
        for it in op.iterations:
            for e in it:
                if isinstance(e, MatrixWork):
                    m_flops += 2 * e.m * e.n * e.k
                elif isinstance(e, VectorWork):
                    v_flops += e.elems
                elif isinstance(e, (DramRead, DramWrite)):
                    dram_bytes += e.bytes
    compute = math.ceil(m_flops / (core.matrix_tflops * 1e3 / core.frequency_ghz))
    peak_bpc = cfg.channel.burst_bytes / cfg.dram_timing.tBURST * core.channels
    traffic = math.ceil(dram_bytes / peak_bpc)
    return max(compute, traffic, 1)


def simulate_compute(op: ComputeOp, cfg: ArchConfig, start_cycle: int = 0) -> OperatorResult:
    """Execute one pipelined kernel on a representative core."""
    placement = op.placement or infer_placement(op.checked, cfg)
    dram = DramSystem(cfg)
    now = start_cycle
    m_flops = v_flops = dram_bytes = 0
    for desc_op in op.desc.operators:
        for it in desc_op.iterations:
            mem_events = [e for e in it if isinstance(e, (DramRead, DramWrite))]
            compute_cycles = 0
            for e in it:
                if isinstance(e, MatrixWork):
                    cost = matrix_cost(e.m, e.n, e.k, e.dtype_bytes, cfg.core,
                                       accumulate=e.accumulate)
                    compute_cycles += cost.latency_cycles
                    m_flops += 2 * e.m * e.n * e.k
                elif isinstance(e, VectorWork):
                    cost = vector_cost(e.kind, e.elems, e.dtype_bytes, cfg.core)
                    compute_cycles += cost.latency_cycles
                    v_flops += e.elems
            mem_done = now
            if mem_events:
                reqs = _dram_requests(mem_events, placement, now)
                for req in schedule_tile(reqs, cfg):
                    dram.issue([(req.addr, req.bytes)], req.kind, req.ready)
                mem_done = dram.drain()
                dram_bytes += sum(e.bytes for e in mem_events)
            now = max(mem_done, now + compute_cycles)
    cycles = now - start_cycle
    bound = roofline_cycles(op.checked, op.desc)
    d = dram_stats(dram, start_cycle)
    en = cfg.energy
    energy = dram_bytes * 8 * en.dram_pj_per_bit * 1e-12 \
        + (m_flops + v_flops) * en.flop_pj * 1e-12
    return OperatorResult(
        op.name, "compute", cycles, dram_bytes=dram_bytes,
        matrix_flops=m_flops, vector_flops=v_flops,
        utilization=min(1.0, bound / cycles) if cycles else 1.0,
        dram_utilization=d["utilization"], row_hit_rate=d["row_hit_rate"],
        energy_j=energy)


def simulate_collective(op: CollectiveOp, cfg: ArchConfig, start_cycle: int = 0) -> OperatorResult:
    result = run_plan(op.plan, op.array, cfg, start_cycle=start_cycle)
    cycles = max(result.makespan - start_cycle, 0)
    # Lower bound: the busiest core's send bytes over one link.
    per_core = max((op.plan.bytes_sent(c) for c in op.array.coords()), default=0)
    bound = math.ceil(per_core / cfg.noc.link_bytes_per_cycle) if per_core else 0
    energy = result.bytes_hops * cfg.energy.noc_pj_per_byte_hop * 1e-12
    return OperatorResult(
        op.name, "collective", cycles,
        noc_bytes_hops=result.bytes_hops,
        utilization=min(1.0, bound / cycles) if cycles else 1.0,
        energy_j=energy)


def inter_accel_latency(nbytes: int, link) -> float:
    """Seconds for one transfer: fixed link latency plus serialization."""
    if nbytes < 0:
        raise ValueError("transfer size must be non-negative")
    return link.link_latency_s + nbytes / (link.bandwidth_gbps * 1e9)


def inter_accel_cycles(nbytes: int, cfg: ArchConfig) -> int:
    cycles = inter_accel_latency(nbytes, cfg.inter) * cfg.core.frequency_ghz * 1e9
    # Tolerate float noise so exact-integer cycle counts don't round up.
    return math.ceil(cycles - 1e-6)


def run(operators: list, cfg: ArchConfig) -> SimReport:
    """Simulate an operator graph with barriers between operators."""
    now = 0
    results: list[OperatorResult] = []
    energy = {"dram": 0.0, "compute": 0.0, "noc": 0.0, "inter": 0.0}
    for op in operators:
        if isinstance(op, ComputeOp):
            res = simulate_compute(op, cfg, start_cycle=now)
            energy["dram"] += res.dram_bytes * 8 * cfg.energy.dram_pj_per_bit * 1e-12
            energy["compute"] += (res.matrix_flops + res.vector_flops) \
                * cfg.energy.flop_pj * 1e-12
        elif isinstance(op, CollectiveOp):
            res = simulate_collective(op, cfg, start_cycle=now)
            energy["noc"] += res.energy_j
        elif isinstance(op, InterAccelOp):
            cycles = inter_accel_cycles(op.bytes, cfg)
            res = OperatorResult(op.name, "inter_accel", cycles, utilization=1.0)
        else:
            raise TypeError(f"unknown operator {op!r}")
        results.append(res)
        now += res.cycles
    seconds = now / (cfg.core.frequency_ghz * 1e9)
    return SimReport(cycles=now, seconds=seconds, operators=results,
                     energy_j=energy, frequency_ghz=cfg.core.frequency_ghz)
