"""Shape/residency checking of kernel programs against a hardware config."""

from __future__ import annotations

from dataclasses import dataclass
from math import prod

from ..arch import ArchConfig
from .ast import (
    AllocDecl, Copy, ForLoop, Gemm, KernelProgram, Recv, Send, Slice, Stmt,
    TensorDecl, TileRef, VectorOp, DTYPE_BYTES, evaluate, free_vars,
)


class TypecheckError(ValueError):
    def __init__(self, msg: str, line: int = 0):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line


@dataclass(frozen=True)
class SymbolInfo:
    name: str
    kind: str  # "tensor" (DRAM) or "alloc" (SRAM)
    shape: tuple[int, ...]
    dtype: str
    layout: str | None  # tensors only

    @property
    def dtype_bytes(self) -> int:
        return DTYPE_BYTES[self.dtype]

    @property
    def size_bytes(self) -> int:
        return prod(self.shape) * self.dtype_bytes


@dataclass(frozen=True)
class CheckedProgram:
    program: KernelProgram
    bindings: dict
    symbols: dict  # name -> SymbolInfo
    cfg: ArchConfig

    def symbol(self, name: str) -> SymbolInfo:
        return self.symbols[name]


def _ref_shape(ref: TileRef, symbols: dict, env: dict) -> tuple[int, ...]:
    """Extent per dimension of a (possibly sliced) reference.

    Slices whose bounds involve loop variables are evaluated with those
    variables at their loop lower bound; tile extents must not depend on the
    iteration, which holds for affine `base + var*factor` slicing.
    """
    info = symbols.get(ref.name)
    if info is None:
        raise TypecheckError(f"use of undeclared name '{ref.name}'", ref.line)
    if not ref.indices:
        return info.shape
    if len(ref.indices) != len(info.shape):
        raise TypecheckError(
            f"'{ref.name}' sliced with {len(ref.indices)} indices but has "
            f"{len(info.shape)} dimensions", ref.line)
    extents = []
    for sl, dim in zip(ref.indices, info.shape):
        try:
            lo = evaluate(sl.lo, env)
            hi = evaluate(sl.hi, env)
        except KeyError as e:
            raise TypecheckError(str(e), ref.line) from None
        if hi <= lo:
            raise TypecheckError(f"empty slice [{lo}:{hi}] on '{ref.name}'", ref.line)
        extents.append(hi - lo)
    return tuple(extents)


def _broadcast(shapes: list[tuple[int, ...]], line: int) -> tuple[int, ...]:
    rank = max(len(s) for s in shapes)
    shapes = [(1,) * (rank - len(s)) + s for s in shapes]
    out = []
    for dims in zip(*shapes):
        sizes = {d for d in dims if d != 1}
        if len(sizes) > 1:
            raise TypecheckError(f"incompatible operand shapes {shapes}", line)
        out.append(max(dims))
    return tuple(out)


def typecheck(prog: KernelProgram, cfg: ArchConfig, bindings: dict[str, int]) -> CheckedProgram:
    """Verify declarations, shapes, and SRAM/DRAM capacity under bindings."""
    missing = [p for p in prog.params if p not in bindings]
    if missing:
        raise TypecheckError(f"unbound kernel parameter(s): {missing}")
    env = dict(bindings)
    symbols: dict[str, SymbolInfo] = {}

    def eval_shape(decl) -> tuple[int, ...]:
        dims = []
        for e in decl.shape:
            unknown = free_vars(e) - set(env)
            if unknown:
                raise TypecheckError(
                    f"shape of '{decl.name}' uses unbound name(s) {sorted(unknown)}",
                    decl.line)
            v = evaluate(e, env)
            if v <= 0:
                raise TypecheckError(f"non-positive dimension {v} in '{decl.name}'", decl.line)
            dims.append(v)
        return tuple(dims)

    def check_block(stmts: tuple[Stmt, ...], loop_env: dict):
        for stmt in stmts:
            if isinstance(stmt, (TensorDecl, AllocDecl)):
                if stmt.name in symbols:
                    raise TypecheckError(f"redeclaration of '{stmt.name}'", stmt.line)
                kind = "tensor" if isinstance(stmt, TensorDecl) else "alloc"
                layout = stmt.layout if isinstance(stmt, TensorDecl) else "row"
                symbols[stmt.name] = SymbolInfo(
                    stmt.name, kind, eval_shape(stmt), stmt.dtype, layout)
            elif isinstance(stmt, Copy):
                s_shape = _ref_shape(stmt.src, symbols, loop_env)
                d_shape = _ref_shape(stmt.dst, symbols, loop_env)
                if prod(s_shape) != prod(d_shape):
                    raise TypecheckError(
                        f"copy extent mismatch: {s_shape} vs {d_shape}", stmt.line)
                src_k = symbols[stmt.src.name].kind
                dst_k = symbols[stmt.dst.name].kind
                if (src_k, dst_k) == ("tensor", "tensor"):
                    raise TypecheckError("copy cannot move DRAM to DRAM directly", stmt.line)
            elif isinstance(stmt, Gemm):
                for ref in (stmt.a, stmt.b, stmt.out):
                    if symbols.get(ref.name) is None:
                        raise TypecheckError(f"use of undeclared name '{ref.name}'", ref.line)
                    if symbols[ref.name].kind != "alloc":
                        raise TypecheckError(
                            f"gemm operand '{ref.name}' must reside in SRAM", stmt.line)
                a = _ref_shape(stmt.a, symbols, loop_env)
                b = _ref_shape(stmt.b, symbols, loop_env)
                out = _ref_shape(stmt.out, symbols, loop_env)
                if len(a) != 2 or len(b) != 2 or len(out) != 2:
                    raise TypecheckError("gemm operands must be 2D", stmt.line)
                bk, bn = (b[1], b[0]) if stmt.transpose_b else (b[0], b[1])
                if a[1] != bk:
                    raise TypecheckError(
                        f"gemm inner dimensions differ: {a} x {b}"
                        f"{' (transposed B)' if stmt.transpose_b else ''}", stmt.line)
                if out != (a[0], bn):
                    raise TypecheckError(
                        f"gemm output shape {out} != ({a[0]}, {bn})", stmt.line)
            elif isinstance(stmt, VectorOp):
                shapes = [_ref_shape(r, symbols, loop_env) for r in stmt.operands]
                _broadcast(shapes, stmt.line)
                _ref_shape(stmt.out, symbols, loop_env)
                for ref in (*stmt.operands, stmt.out):
                    if symbols[ref.name].kind != "alloc":
                        raise TypecheckError(
                            f"vector operand '{ref.name}' must reside in SRAM", stmt.line)
            elif isinstance(stmt, (Send, Recv)):
                _ref_shape(stmt.data, symbols, loop_env)
                for e in (stmt.src, stmt.dst):
                    unknown = free_vars(e) - set(loop_env)
                    if unknown:
                        raise TypecheckError(
                            f"unbound name(s) in core index: {sorted(unknown)}", stmt.line)
            elif isinstance(stmt, ForLoop):
                for e in (stmt.lo, stmt.hi, stmt.step):
                    unknown = free_vars(e) - set(loop_env)
                    if unknown:
                        raise TypecheckError(
                            f"unbound name(s) in loop bounds: {sorted(unknown)}", stmt.line)
                if evaluate(stmt.step, loop_env) <= 0:
                    raise TypecheckError("loop step must be positive", stmt.line)
                inner = dict(loop_env)
                inner[stmt.var] = evaluate(stmt.lo, loop_env)
                check_block(stmt.body, inner)
            else:
                raise TypecheckError(f"unsupported statement {stmt!r}")

    check_block(prog.body, env)

    sram_total = sum(s.size_bytes for s in symbols.values() if s.kind == "alloc")
    if sram_total > cfg.core.sram_bytes:
        raise TypecheckError(
            f"SRAM over capacity: allocs need {sram_total} bytes, "
            f"core has {cfg.core.sram_bytes}")
    dram_total = sum(s.size_bytes for s in symbols.values() if s.kind == "tensor")
    core_capacity = cfg.channel_capacity_bytes * cfg.core.channels
    if dram_total > core_capacity:
        raise TypecheckError(
            f"DRAM tensors need {dram_total} bytes, core capacity is {core_capacity}")
    return CheckedProgram(prog, dict(bindings), symbols, cfg)
