"""Model descriptions, decoding operator graphs, and DRAM microbenchmarks."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from importlib import resources

import yaml

from .arch import ArchConfig
from .dramsim import Request
from .kerneldsl.ast import DTYPE_BYTES, KernelProgram
from .kerneldsl.checker import typecheck
from .kerneldsl.parser import parse_kernel
from .orchestrator import CollectiveOp, ComputeOp, InterAccelOp
from .partition import CoreArray, build_collective
from .tiler import generate_execution, infer_placement


class WorkloadError(ValueError):
    pass


def load_kernel(name: str) -> KernelProgram:
    """Load a kernel shipped with the package by bare name."""
    text = resources.files("stacksim").joinpath(f"kernels/{name}.kl").read_text()
    return parse_kernel(text)


@dataclass(frozen=True)
class ModelSpec:
    name: str
    layers: int
    hidden: int
    heads: int
    kv_heads: int
    head_dim: int
    ffn_type: str  # "mlp" | "glu" | "moe"
    intermediate: int
    experts: int = 0
    top_k: int = 0
    dtype: str = "fp16"

    def validate(self) -> list[str]:
        v = []
        if self.layers < 1:
            v.append("layers >= 1")
        if self.hidden != self.heads * self.head_dim:
            v.append(f"hidden ({self.hidden}) != heads*head_dim "
                     f"({self.heads}*{self.head_dim})")
        if self.kv_heads < 1 or self.heads % self.kv_heads:
            v.append(f"kv_heads ({self.kv_heads}) must divide heads ({self.heads})")
        if self.ffn_type not in ("mlp", "glu", "moe"):
            v.append(f"unknown ffn_type {self.ffn_type!r}")
        if self.ffn_type == "moe" and (self.experts < 2 or not 1 <= self.top_k <= self.experts):
            v.append("moe needs experts >= 2 and 1 <= top_k <= experts")
        if self.dtype not in DTYPE_BYTES:
            v.append(f"unknown dtype {self.dtype!r}")
        return v

    @property
    def dtype_bytes(self) -> int:
        return DTYPE_BYTES[self.dtype]

    @property
    def kv_hidden(self) -> int:
        return self.kv_heads * self.head_dim

    def fc_shapes(self) -> list[tuple[str, int, int]]:
        """(name, K, N) of every per-layer FC operator (batch dim excluded)."""
        shapes = [("qkv_fc", self.hidden, self.hidden + 2 * self.kv_hidden),
                  ("out_fc", self.hidden, self.hidden)]
        if self.ffn_type == "mlp":
            shapes += [("ffn_up", self.hidden, self.intermediate),
                       ("ffn_down", self.intermediate, self.hidden)]
        elif self.ffn_type == "glu":
            shapes += [("ffn_gate", self.hidden, self.intermediate),
                       ("ffn_up", self.hidden, self.intermediate),
                       ("ffn_down", self.intermediate, self.hidden)]
        else:
            shapes += [("expert_up", self.hidden, self.intermediate),
                       ("expert_down", self.intermediate, self.hidden)]
        return shapes

    def params_per_layer(self) -> int:
        ffn_mult = self.experts if self.ffn_type == "moe" else 1
        total = 0
        for name, k, n in self.fc_shapes():
            total += k * n * (ffn_mult if name.startswith(("ffn", "expert")) else 1)
        return total

    def kv_bytes_per_token(self) -> int:
        return 2 * self.layers * self.kv_hidden * self.dtype_bytes


def load_model(name: str) -> ModelSpec:
    text = resources.files("stacksim").joinpath(f"models/{name}.yaml").read_text()
    return model_from_yaml(text)


def model_from_yaml(text: str) -> ModelSpec:
    doc = yaml.safe_load(text)
    spec = ModelSpec(**doc)
    problems = spec.validate()
    if problems:
        raise WorkloadError(f"model {spec.name}: " + "; ".join(problems))
    return spec


@dataclass(frozen=True)
class DecodingScenario:
    batch: int = 16
    context: int = 1024
    accelerators: int = 1
    tp: int = 1
    ep: int = 1

    def validate(self, model: ModelSpec) -> list[str]:
        v = []
        for f in ("batch", "context", "accelerators", "tp", "ep"):
            if getattr(self, f) < 1:
                v.append(f"{f} >= 1")
        if self.ep > 1 and model.ffn_type != "moe":
            v.append("expert parallelism requires a MoE model")
        return v


@dataclass(frozen=True)
class PagedKvLayout:
    blocks_per_core: int
    slots_per_block: int
    kv_vector_bytes: int = 256

    def validate(self, context: int) -> list[str]:
        v = []
        if min(self.blocks_per_core, self.slots_per_block, self.kv_vector_bytes) < 1:
            v.append("all layout fields must be positive")
        if self.blocks_per_core * self.slots_per_block < context:
            v.append(f"{self.blocks_per_core} blocks x {self.slots_per_block} slots "
                     f"cannot cover context {context}")
        return v

    def block_sequence(self, context: int, rng: random.Random) -> list[int]:
        """Randomly permuted block ids covering `context` slots."""
        need = -(-context // self.slots_per_block)
        ids = list(range(self.blocks_per_core))
        rng.shuffle(ids)
        return ids[:need]


def _pick_tiling(m: int, k: int, n: int, cfg: ArchConfig) -> dict[str, int]:
    """Feasible default tiles for matmul_rowblock: shrink until the row
    block, one B tile, the accumulator, and load double-buffers fit SRAM."""
    dt = 2
    tm, tn, tk = min(m, 64), min(n, 256), min(k, 256)
    while tm >= 1:
        need = 2 * (tm * k * dt) + 2 * (tk * tn * dt) + tm * tn * dt
        if need <= cfg.core.sram_bytes:
            return {"tM": tm, "tN": tn, "tK": tk}
        if tn > 64:
            tn //= 2
        elif tk > 64:
            tk //= 2
        else:
            tm //= 2
    raise WorkloadError(f"no feasible tiling for ({m},{k})x({k},{n})")


def make_fc_op(name: str, m: int, k: int, n: int, cfg: ArchConfig,
               tiling: dict[str, int] | None = None) -> ComputeOp:
    prog = load_kernel("matmul_rowblock")
    bindings = {"M": m, "K": k, "N": n}
    bindings.update(tiling or _pick_tiling(m, k, n, cfg))
    checked = typecheck(prog, cfg, bindings)
    desc = generate_execution(checked, cfg, name=name)
    return ComputeOp(name, checked, desc, infer_placement(checked, cfg))


def make_attention_op(name: str, batch: int, head_dim: int, context: int,
                      cfg: ArchConfig) -> ComputeOp:
    prog = load_kernel("fused_attention")
    tl = min(context, 512)
    checked = typecheck(prog, cfg, {"B": batch, "D": head_dim,
                                    "L": context, "tL": tl})
    desc = generate_execution(checked, cfg, name=name)
    return ComputeOp(name, checked, desc, infer_placement(checked, cfg))


def build_decoding_graph(model: ModelSpec, scen: DecodingScenario,
                         cfg: ArchConfig, layers: int | None = None) -> list:
    """Per-decoding-step operator graph for one accelerator.

    Every core runs the same kernels on equal shards (SPMD): FC weights are
    sharded over the 2D core array along (K, N), so per-core FC problems are
    (batch, K/rows) x (K/rows, N/cols), followed by a 1D all-reduce of the
    partial sums. Attention splits the context evenly over all cores and is
    followed by a 2D all-reduce. The batch dimension is never partitioned.
    MoE routing uses the uniform expectation: each expert sees
    batch * top_k / experts tokens (at least one).
    """
    problems = model.validate() + scen.validate(model)
    if problems:
        raise WorkloadError("; ".join(problems))
    rows, cols = cfg.noc.rows, cfg.noc.cols
    cores = rows * cols
    arr = CoreArray((rows, cols), (rows, cols))
    dt = model.dtype_bytes
    n_layers = layers if layers is not None else model.layers
    batch = scen.batch
    ar_bytes = max(1, batch * model.hidden * dt // cores)
    ops: list = []
    for layer in range(n_layers):
        pre = f"layer{layer}."
        for fc_name, k, n in model.fc_shapes():
            shard_k = max(1, k // rows)
            shard_n = max(1, n // cols)
            if fc_name.startswith("expert"):
                routed = max(1, batch * model.top_k // model.experts)
                experts_here = max(1, model.experts // scen.ep)
                for e in range(experts_here):
                    ops.append(make_fc_op(f"{pre}{fc_name}{e}", routed,
                                          shard_k, shard_n, cfg))
                ops.append(CollectiveOp(f"{pre}{fc_name}.all_reduce",
                                        "all_reduce_1d",
                                        build_collective(arr, "all_reduce_1d", ar_bytes),
                                        arr))
                continue
            ops.append(make_fc_op(pre + fc_name, batch, shard_k, shard_n, cfg))
            ops.append(CollectiveOp(f"{pre}{fc_name}.all_reduce", "all_reduce_1d",
                                    build_collective(arr, "all_reduce_1d", ar_bytes),
                                    arr))
            if fc_name == "qkv_fc":
                ctx = max(1, scen.context // cores)
                ops.append(make_attention_op(pre + "attention", batch,
                                             model.head_dim, ctx, cfg))
                ops.append(CollectiveOp(f"{pre}attention.all_reduce",
                                        "all_reduce_2d",
                                        build_collective(arr, "all_reduce_2d", ar_bytes),
                                        arr))
        if scen.tp > 1:
            nbytes = int(2 * (scen.tp - 1) / scen.tp * batch * model.hidden * dt)
            ops.append(InterAccelOp(pre + "tp_all_reduce", nbytes))
        if scen.ep > 1:
            nbytes = int((scen.ep - 1) / scen.ep * batch * model.hidden * dt)
            ops.append(InterAccelOp(pre + "ep_all_to_all", nbytes))
    return ops


def graph_totals(ops: list) -> dict:
    """Aggregate FLOPs and DRAM bytes of a graph (compute operators only)."""
    flops = nbytes = 0
    for op in ops:
        if not isinstance(op, ComputeOp):
            continue
        for d in op.desc.operators:
            for it in d.iterations:
                for e in it:
                    if hasattr(e, "m"):
                        flops += 2 * e.m * e.n * e.k
                    elif hasattr(e, "ranges"):
                        nbytes += e.bytes
    return {"matrix_flops": flops, "dram_bytes": nbytes}


# --- DRAM microbenchmarks -------------------------------------------------

def gen_gemm_benchmark(cfg: ArchConfig, M: int = 64, K: int = 8192, N: int = 8192,
                       tiling: dict[str, int] | None = None) -> list[Request]:
    """Tile-ordered GEMM access trace: A/C row-major, B column-major."""
    prog = load_kernel("matmul")
    bindings = {"M": M, "K": K, "N": N}
    bindings.update(tiling or {"tM": min(M, 64), "tN": 256, "tK": 256})
    checked = typecheck(prog, cfg, bindings)
    placement = infer_placement(checked, cfg)
    from .kerneldsl.trace import DramRead, DramWrite, expand
    reqs = []
    for e in expand(checked).events:
        if isinstance(e, (DramRead, DramWrite)):
            base = placement.tensors[e.tensor].base_address
            kind = "R" if isinstance(e, DramRead) else "W"
            for off, length in e.ranges:
                reqs.append(Request(0, kind, base + off, length))
    return reqs


def gen_paged_attention_benchmark(cfg: ArchConfig, layout: PagedKvLayout,
                                  context: int, seed: int = 0,
                                  runs: int = 10) -> list[list[Request]]:
    """Paged-KV gather traces: `runs` independent random block sequences."""
    problems = layout.validate(context)
    if problems:
        raise WorkloadError("; ".join(problems))
    rng = random.Random(seed)
    block_bytes = layout.slots_per_block * layout.kv_vector_bytes
    out = []
    for _ in range(runs):
        reqs = []
        remaining = context
        for block in layout.block_sequence(context, rng):
            take = min(remaining, layout.slots_per_block)
            for slot in range(take):
                addr = block * block_bytes + slot * layout.kv_vector_bytes
                reqs.append(Request(0, "R", addr, layout.kv_vector_bytes))
            remaining -= take
        out.append(reqs)
    return out


def serialize_trace(reqs: list[Request]) -> str:
    """One request per line: `cycle_ready, R|W, address, bytes`."""
    lines = [f"{r.ready}, {r.kind}, {r.addr}, {r.bytes}" for r in reqs]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_trace(text: str) -> list[Request]:
    reqs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4 or parts[1] not in ("R", "W"):
            raise WorkloadError(
                f"trace line {lineno}: expected 'cycle_ready, R|W, address, bytes'")
        reqs.append(Request(int(parts[0]), parts[1], int(parts[2]), int(parts[3])))
    return reqs
