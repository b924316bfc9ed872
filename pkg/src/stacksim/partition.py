"""Multi-core operator partitioning and point-to-point communication plans.

Cores are addressed through an N-dimensional logical array laid over the
physical 2D mesh. GEMM dimensions and attention token slots are sharded over
logical axes; collectives are expressed as explicit per-step send/recv plans
that the NoC simulator replays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod

from .arch import NocSpec


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class CoreArray:
    shape: tuple[int, ...]
    physical: tuple[int, int]  # (X rows, Y cols) of the mesh

    def __post_init__(self):
        if prod(self.shape) != self.physical[0] * self.physical[1]:
            raise PartitionError(
                f"core array {self.shape} does not cover the "
                f"{self.physical[0]}x{self.physical[1]} mesh")

    @classmethod
    def from_noc(cls, shape: tuple[int, ...], noc: NocSpec) -> "CoreArray":
        return cls(tuple(shape), (noc.rows, noc.cols))

    @property
    def count(self) -> int:
        return prod(self.shape)

    def coords(self):
        def rec(prefix, dims):
            if not dims:
                yield tuple(prefix)
                return
            for x in range(dims[0]):
                yield from rec(prefix + [x], dims[1:])
        yield from rec([], list(self.shape))

    def linearize(self, coord: tuple[int, ...]) -> int:
        # Row-major mixed-radix linearization: the last axis varies fastest.
        if len(coord) != len(self.shape):
            raise PartitionError(f"coordinate {coord} has wrong rank for {self.shape}")
        c = 0
        for x, extent in zip(coord, self.shape):
            if not 0 <= x < extent:
                raise PartitionError(f"coordinate {coord} out of range for {self.shape}")
            c = c * extent + x
        return c


def logical_to_physical(arr: CoreArray, coord: tuple[int, ...]) -> tuple[int, int]:
    """Logical coordinate -> mesh (m, n), bijective over the whole array."""
    c = arr.linearize(coord)
    y = arr.physical[1]
    return c // y, c % y


def _shard_ranges(extent: int, parts: int) -> list[tuple[int, int]]:
    """Contiguous split into `parts` ranges; the last part takes the remainder."""
    base = extent // parts
    ranges = []
    start = 0
    for i in range(parts):
        size = base if i < parts - 1 else extent - base * (parts - 1)
        ranges.append((start, start + size))
        start += size
    return ranges


@dataclass(frozen=True)
class CoreShard:
    a_shard: tuple[tuple[int, int], tuple[int, int]]  # ((row lo, hi), (col lo, hi))
    b_shard: tuple[tuple[int, int], tuple[int, int]]
    out_shard: tuple[tuple[int, int], tuple[int, int]]
    replication_group: tuple[tuple[int, ...], ...]
    reduction_group: tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class GemmPartition:
    M: int
    K: int
    N: int
    core_dim_mapping: dict  # {"M": axes, "K": axes, "N": axes}
    shards: dict  # logical coord -> CoreShard


def split_gemm(arr: CoreArray, M: int, K: int, N: int,
               core_dim_mapping: dict[str, list[int]]) -> GemmPartition:
    """Shard a (M,K)x(K,N) GEMM over the logical core array.

    Each problem dimension may list the logical axes that partition it;
    shards are assigned contiguously with the last listed axis varying
    fastest. M-partitioning shards the (M,K) matrix with (K,N) replicated;
    K/N-partitioning shards (K,N) with (M,K) replicated along the same K
    split. Output partial-sum placement follows from the input placement:
    cores differing only along K axes form one reduction group.
    """
    mapping = {dim: list(core_dim_mapping.get(dim, [])) for dim in ("M", "K", "N")}
    used = [ax for axes in mapping.values() for ax in axes]
    if len(used) != len(set(used)):
        raise PartitionError(f"core-array axis reused across dimensions: {core_dim_mapping}")
    for ax in used:
        if not 0 <= ax < len(arr.shape):
            raise PartitionError(f"axis {ax} out of range for array {arr.shape}")

    extents = {"M": M, "K": K, "N": N}
    splits = {}
    for dim, axes in mapping.items():
        parts = prod(arr.shape[ax] for ax in axes) if axes else 1
        splits[dim] = _shard_ranges(extents[dim], parts)

    def shard_index(coord, axes):
        idx = 0
        for ax in axes:
            idx = idx * arr.shape[ax] + coord[ax]
        return idx

    coords = list(arr.coords())
    shards = {}
    for coord in coords:
        m_rng = splits["M"][shard_index(coord, mapping["M"])]
        k_rng = splits["K"][shard_index(coord, mapping["K"])]
        n_rng = splits["N"][shard_index(coord, mapping["N"])]
        a_shard = (m_rng, k_rng)
        b_shard = (k_rng, n_rng)
        out_shard = (m_rng, n_rng)
        k_axes = set(mapping["K"])
        n_axes = set(mapping["N"])
        m_axes = set(mapping["M"])

        def same_except(other, free_axes):
            return all(o == s for ax, (o, s) in enumerate(zip(other, coord))
                       if ax not in free_axes)

        # A is replicated across cores that only differ along N axes.
        replication = tuple(o for o in coords if same_except(o, n_axes))
        # Partial sums of one output shard live on cores that only differ
        # along K axes.
        reduction = tuple(o for o in coords if same_except(o, k_axes))
        shards[coord] = CoreShard(a_shard, b_shard, out_shard, replication, reduction)
    return GemmPartition(M, K, N, mapping, shards)


@dataclass(frozen=True)
class AttentionPartition:
    assignments: dict  # logical coord -> list of (token id, slot id)

    def context_length(self, coord) -> int:
        return len(self.assignments.get(coord, []))


def split_attention(arr: CoreArray,
                    token_slot_list: list[tuple[tuple[int, ...], list[int]]]) -> AttentionPartition:
    """Distribute request tokens consecutively over per-core KV slots.

    Token t of the request lands in the t-th slot of the concatenated item
    order; each item names a core's logical coordinate and the KV-cache slot
    ids it contributes.
    """
    assignments: dict[tuple[int, ...], list[tuple[int, int]]] = {}
    seen_slots: dict[tuple[int, ...], set[int]] = {}
    token = 0
    for coord, slots in token_slot_list:
        coord = tuple(coord)
        arr.linearize(coord)  # validates the coordinate
        taken = seen_slots.setdefault(coord, set())
        for slot in slots:
            if slot in taken:
                raise PartitionError(f"duplicate slot {slot} on core {coord}")
            taken.add(slot)
            assignments.setdefault(coord, []).append((token, slot))
            token += 1
    return AttentionPartition(assignments)


@dataclass(frozen=True)
class CommStep:
    step: int
    src: tuple[int, ...]
    dst: tuple[int, ...]
    bytes: int


@dataclass(frozen=True)
class CommPlan:
    steps: tuple[CommStep, ...]

    @property
    def step_count(self) -> int:
        return max((s.step for s in self.steps), default=-1) + 1

    def bytes_sent(self, coord) -> int:
        return sum(s.bytes for s in self.steps if s.src == coord)

    def total_bytes(self) -> int:
        return sum(s.bytes for s in self.steps)

    def serialize(self) -> str:
        lines = [f"{s.step} {list(s.src)} -> {list(s.dst)} {s.bytes}" for s in self.steps]
        return "\n".join(lines) + ("\n" if lines else "")


def _ring_chunks(total: int, p: int) -> list[int]:
    return [hi - lo for lo, hi in _shard_ranges(total, p)]


def _ring_reduce_scatter(ring: list[tuple[int, ...]], nbytes: int, step0: int = 0) -> list[CommStep]:
    p = len(ring)
    chunks = _ring_chunks(nbytes, p)
    steps = []
    for s in range(p - 1):
        for i, src in enumerate(ring):
            dst = ring[(i + 1) % p]
            # Core i forwards chunk (i - s) mod p at step s.
            chunk = chunks[(i - s) % p]
            steps.append(CommStep(step0 + s, src, dst, chunk))
    return steps


def _ring_all_gather(ring: list[tuple[int, ...]], nbytes: int, step0: int = 0) -> list[CommStep]:
    p = len(ring)
    chunks = _ring_chunks(nbytes, p)
    steps = []
    for s in range(p - 1):
        for i, src in enumerate(ring):
            dst = ring[(i + 1) % p]
            chunk = chunks[(i + 1 - s) % p]
            steps.append(CommStep(step0 + s, src, dst, chunk))
    return steps


def build_collective(arr: CoreArray, kind: str, bytes_per_core: int) -> CommPlan:
    """Build a communication plan for a collective over the whole array.

    Ring variants order cores by their linearized logical index. The 2D
    all-reduce runs the 1D all-reduce schedule along rows of the first axis,
    then along columns, each phase on the full payload.
    """
    coords = sorted(arr.coords(), key=arr.linearize)
    p = len(coords)
    if kind in ("ring_reduce_scatter", "ring_all_gather", "all_reduce_1d"):
        if p == 1:
            return CommPlan(())
        if p < 2:
            raise PartitionError("ring collectives need at least 2 cores")
        if kind == "ring_reduce_scatter":
            return CommPlan(tuple(_ring_reduce_scatter(coords, bytes_per_core)))
        if kind == "ring_all_gather":
            return CommPlan(tuple(_ring_all_gather(coords, bytes_per_core)))
        rs = _ring_reduce_scatter(coords, bytes_per_core)
        ag = _ring_all_gather(coords, bytes_per_core, step0=p - 1)
        return CommPlan(tuple(rs + ag))
    if kind == "all_reduce_2d":
        if len(arr.shape) < 2:
            raise PartitionError("all_reduce_2d needs a >= 2D core array")
        steps: list[CommStep] = []
        step0 = 0
        # Phase 1: all-reduce along axis 1 within each row of axis 0.
        rows: dict[tuple, list] = {}
        for coord in coords:
            rows.setdefault(coord[:1] + coord[2:], []).append(coord)
        for group in rows.values():
            if len(group) < 2:
                continue
            sub = _ring_reduce_scatter(group, bytes_per_core) + \
                _ring_all_gather(group, bytes_per_core, step0=len(group) - 1)
            steps.extend(sub)
        step0 = max((s.step for s in steps), default=-1) + 1
        # Phase 2: all-reduce along axis 0 within each column.
        cols: dict[tuple, list] = {}
        for coord in coords:
            cols.setdefault(coord[1:], []).append(coord)
        for group in cols.values():
            if len(group) < 2:
                continue
            sub = _ring_reduce_scatter(group, bytes_per_core, step0=step0) + \
                _ring_all_gather(group, bytes_per_core, step0=step0 + len(group) - 1)
            steps.extend(sub)
        return CommPlan(tuple(steps))
    raise PartitionError(f"unsupported collective kind: {kind}")
