"""Circuit -> tensor network, contraction-path search, slicing and cost accounting.

Index sets are handled as Python-int bitsets during planning. Every bond has
dimension 2, and every label sits on at most two tensors, so the index set
of a contracted pair is the XOR of its operands' sets and the
multiply-add count of the pairwise contraction is ``2**popcount(a | b)``.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .circuit import Circuit
from .errors import InfeasibleError, InputError

#: Real floating-point operations per complex multiply-add.
FLOPS_PER_CMADD = 8


@dataclass(frozen=True)
class Tensor:
    tid: int
    labels: tuple[str, ...]
    data: np.ndarray

    @property
    def nbytes(self) -> int:
        return int(self.data.nbytes)


@dataclass(frozen=True)
class WireSegment:
    """A stretch of qubit wire between the gate at ``start`` and the gate at ``end``.

    Layer index -1 stands for the input, ``len(circuit.layers)`` for the output.
    """

    qubit: int
    start: int
    end: int


@dataclass(frozen=True)
class TensorNetwork:
    tensors: tuple[Tensor, ...]
    open_indices: tuple[str, ...]
    fixed_indices: dict[str, int] = field(default_factory=dict)
    wires: dict[str, WireSegment] = field(default_factory=dict)
    n_layers: int = 0

    def __post_init__(self):
        counts: dict[str, int] = {}
        for t in self.tensors:
            if t.data.shape != (2,) * len(t.labels):
                raise InputError(f"tensor {t.tid}: data shape {t.data.shape} does not match {len(t.labels)} labels")
            if len(set(t.labels)) != len(t.labels):
                raise InputError(f"tensor {t.tid}: repeated label in {t.labels}")
            for lab in t.labels:
                counts[lab] = counts.get(lab, 0) + 1
        over = [lab for lab, c in counts.items() if c > 2]
        if over:
            raise InputError(f"labels on more than two tensors: {over[:5]}")
        for lab in self.open_indices:
            if counts.get(lab) != 1:
                raise InputError(f"open index {lab!r} must sit on exactly one tensor")

    @property
    def edges(self) -> dict[str, tuple[int, ...]]:
        out: dict[str, list[int]] = {}
        for t in self.tensors:
            for lab in t.labels:
                out.setdefault(lab, []).append(t.tid)
        return {k: tuple(v) for k, v in out.items()}

    @property
    def labels(self) -> list[str]:
        return sorted(self.edges, key=label_key)

    @property
    def inner_labels(self) -> list[str]:
        """Labels shared by two tensors (the contractible bonds)."""
        return [lab for lab, ts in sorted(self.edges.items(), key=lambda kv: label_key(kv[0])) if len(ts) == 2]


def label_key(label: str) -> tuple:
    # "q3_12" sorts as (3, 12); anything else falls back to plain string order
    if label.startswith("q") and "_" in label:
        a, _, b = label[1:].partition("_")
        if a.isdigit() and b.isdigit():
            return (0, int(a), int(b), "")
    return (1, 0, 0, label)


def circuit_to_network(
    circuit: Circuit,
    open_qubits: Sequence[int] | None = None,
    output_bits: dict[int, int] | None = None,
    dtype=np.complex128,
) -> TensorNetwork:
    """One tensor per gate, with input legs pinned to |0>.

    Output legs of ``open_qubits`` (all qubits when ``None``) stay open, in
    the given order. Every other output leg is pinned to ``output_bits[q]``
    (default 0). Qubits without gates get an identity tensor so that each
    wire exists in the network.
    """
    n = circuit.n_qubits
    if open_qubits is None:
        open_qubits = list(range(n))
    open_qubits = [int(q) for q in open_qubits]
    if len(set(open_qubits)) != len(open_qubits):
        raise InputError(f"duplicate open qubits in {open_qubits}")
    bad = [q for q in open_qubits if not 0 <= q < n]
    if bad:
        raise InputError(f"open qubits {bad} not in circuit of {n} qubits")
    output_bits = dict(output_bits or {})
    if set(output_bits) & set(open_qubits):
        raise InputError("a qubit cannot be both open and pinned")

    n_layers = len(circuit.layers)
    seg = [0] * n  # current segment number on each wire
    seg_start = [-1] * n
    wires: dict[str, WireSegment] = {}

    def cur(q: int) -> str:
        return f"q{q}_{seg[q]}"

    raw: list[tuple[tuple[str, ...], np.ndarray]] = []
    for li, layer in enumerate(circuit.layers):
        for g in layer:
            ins = [cur(q) for q in g.targets]
            for q, lab in zip(g.targets, ins):
                wires[lab] = WireSegment(q, seg_start[q], li)
                seg[q] += 1
                seg_start[q] = li
            outs = [cur(q) for q in g.targets]
            k = len(g.targets)
            data = np.asarray(g.unitary, dtype=dtype).reshape((2,) * (2 * k))
            raw.append((tuple(outs) + tuple(ins), data))
    for q in range(n):
        if seg[q] == 0:
            ins, outs = cur(q), None
            wires[ins] = WireSegment(q, -1, n_layers)
            seg[q] += 1
            outs = cur(q)
            raw.append(((outs, ins), np.eye(2, dtype=dtype)))
        wires[cur(q)] = WireSegment(q, seg_start[q], n_layers)

    fixed: dict[str, int] = {f"q{q}_0": 0 for q in range(n)}
    for q in range(n):
        if q not in open_qubits:
            bit = int(output_bits.get(q, 0))
            if bit not in (0, 1):
                raise InputError(f"output bit for qubit {q} must be 0 or 1, got {bit}")
            fixed[cur(q)] = bit

    tensors = []
    for tid, (labels, data) in enumerate(raw):
        labels, data = restrict(labels, data, fixed)
        tensors.append(Tensor(tid, labels, np.array(data, order="C")))
    open_labels = tuple(cur(q) for q in open_qubits)
    return TensorNetwork(tuple(tensors), open_labels, fixed, wires, n_layers)


def restrict(labels: Sequence[str], data: np.ndarray, assignment: dict[str, int]) -> tuple[tuple[str, ...], np.ndarray]:
    """Pin any of ``labels`` found in ``assignment``, dropping those axes."""
    keep = []
    index: list = []
    for lab in labels:
        if lab in assignment:
            index.append(assignment[lab])
        else:
            index.append(slice(None))
            keep.append(lab)
    if len(keep) == len(labels):
        return tuple(labels), data
    return tuple(keep), data[tuple(index)]


# --------------------------------------------------------------------------- planning


@dataclass(frozen=True)
class StepCost:
    lhs: int
    rhs: int
    result: int
    result_labels: tuple[str, ...]
    flops: int
    bytes: int
    traffic: int


@dataclass(frozen=True)
class ContractionPlan:
    """Pairwise contraction order plus slicing/broken-edge bookkeeping.

    ``steps`` is in SSA form: ids below ``n_tensors`` are network tensors,
    step ``i`` creates id ``n_tensors + i``. Costs in ``per_step`` are for a
    single subtask (one slice assignment of one broken-edge configuration).
    """

    n_tensors: int
    leaf_labels: tuple[tuple[str, ...], ...]
    open_indices: tuple[str, ...]
    steps: tuple[tuple[int, int], ...]
    sliced: tuple[str, ...]
    broken: tuple[str, ...]
    per_step: tuple[StepCost, ...]
    itemsize: int
    memory_budget: int | None = None

    @property
    def n_slices(self) -> int:
        return 2 ** len(self.sliced)

    @property
    def subtask_flops(self) -> int:
        return sum(s.flops for s in self.per_step)

    @property
    def subtask_traffic(self) -> int:
        return sum(s.traffic for s in self.per_step)

    @property
    def time_flops(self) -> int:
        """FLOPs for one broken-edge configuration, all slices included."""
        return self.subtask_flops * self.n_slices

    @property
    def memory_traffic_bytes(self) -> int:
        return self.subtask_traffic * self.n_slices

    @property
    def peak_bytes(self) -> int:
        drop = set(self.sliced) | set(self.broken)
        leaf = max((2 ** sum(1 for x in labs if x not in drop) for labs in self.leaf_labels), default=1)
        biggest = max([leaf * self.itemsize] + [s.bytes for s in self.per_step])
        return biggest

    @property
    def order(self):
        """The contraction tree as nested pairs of tensor ids."""
        nodes: list = list(range(self.n_tensors))
        for a, b in self.steps:
            nodes.append((nodes[a], nodes[b]))
        if not self.steps:
            return nodes[0] if self.n_tensors == 1 else None
        return nodes[-1]

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "steps": [list(s) for s in self.steps],
            "sliced": list(self.sliced),
            "broken": list(self.broken),
            "open": list(self.open_indices),
            "itemsize": self.itemsize,
            "memory_budget": self.memory_budget,
            "per_step": [
                {
                    "lhs": s.lhs,
                    "rhs": s.rhs,
                    "result": s.result,
                    "result_labels": list(s.result_labels),
                    "flops": s.flops,
                    "bytes": s.bytes,
                    "traffic": s.traffic,
                }
                for s in self.per_step
            ],
            "totals": {
                "n_slices": self.n_slices,
                "subtask_flops": self.subtask_flops,
                "time_flops": self.time_flops,
                "peak_bytes": self.peak_bytes,
                "memory_traffic_bytes": self.memory_traffic_bytes,
            },
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def _popcount(x: int) -> int:
    return x.bit_count()


def _bits(x: int) -> Iterable[int]:
    while x:
        low = x & -x
        yield low.bit_length() - 1
        x ^= low


class _Bitsets:
    """Label <-> bit mapping for a network with some labels removed."""

    def __init__(self, leaf_labels: Sequence[Sequence[str]], drop: Iterable[str]):
        drop = set(drop)
        seen = sorted({lab for labs in leaf_labels for lab in labs if lab not in drop}, key=label_key)
        self.labels = seen
        self.bit = {lab: i for i, lab in enumerate(seen)}
        self.leaves = [self.mask(labs) for labs in leaf_labels]

    def mask(self, labels: Iterable[str]) -> int:
        m = 0
        for lab in labels:
            b = self.bit.get(lab)
            if b is not None:
                m |= 1 << b
        return m

    def names(self, mask: int) -> tuple[str, ...]:
        return tuple(self.labels[b] for b in _bits(mask))


def _greedy_steps(leaves: list[int]) -> list[tuple[int, int]]:
    """Greedy pairing by ``size(out) - size(a) - size(b)``, opt_einsum style."""
    idx = dict(enumerate(leaves))
    owners: dict[int, set[int]] = {}
    for node, m in idx.items():
        for b in _bits(m):
            owners.setdefault(b, set()).add(node)

    def score(i: int, j: int) -> int:
        return 2 ** _popcount(idx[i] ^ idx[j]) - 2 ** _popcount(idx[i]) - 2 ** _popcount(idx[j])

    heap: list[tuple[int, int, int]] = []
    for nodes in owners.values():
        if len(nodes) == 2:
            i, j = sorted(nodes)
            heapq.heappush(heap, (score(i, j), i, j))

    steps: list[tuple[int, int]] = []
    next_id = len(leaves)
    alive = set(idx)
    while heap:
        _, i, j = heapq.heappop(heap)
        if i not in alive or j not in alive:
            continue
        new = idx[i] ^ idx[j]
        alive -= {i, j}
        for b in _bits(idx[i] | idx[j]):
            owners[b].discard(i)
            owners[b].discard(j)
        k = next_id
        next_id += 1
        idx[k] = new
        alive.add(k)
        steps.append((i, j))
        nbrs = set()
        for b in _bits(new):
            nbrs |= owners[b]
            owners[b].add(k)
        for nb in sorted(nbrs):
            heapq.heappush(heap, (score(nb, k), nb, k))

    # disconnected pieces: outer products, smallest first
    rest = sorted(alive, key=lambda a: (_popcount(idx[a]), a))
    while len(rest) > 1:
        i, j = rest[0], rest[1]
        k = next_id
        next_id += 1
        idx[k] = idx[i] ^ idx[j]
        steps.append((i, j))
        rest = sorted(rest[2:] + [k], key=lambda a: (_popcount(idx[a]), a))
    return steps


class _Tree:
    def __init__(self, leaves: list[int], steps: Sequence[tuple[int, int]]):
        self.n_leaves = len(leaves)
        self.idx = list(leaves)
        self.children: list[tuple[int, int] | None] = [None] * len(leaves)
        self.parent = [-1] * len(leaves)
        for a, b in steps:
            k = len(self.idx)
            self.idx.append(self.idx[a] ^ self.idx[b])
            self.children.append((a, b))
            self.parent.append(-1)
            self.parent[a] = k
            self.parent[b] = k

    def cost(self, node: int) -> int:
        a, b = self.children[node]
        return 2 ** _popcount(self.idx[a] | self.idx[b])

    def internal(self) -> list[int]:
        return list(range(self.n_leaves, len(self.idx)))

    def to_steps(self) -> list[tuple[int, int]]:
        if len(self.idx) == self.n_leaves:
            return []
        root = len(self.idx) - 1
        order: list[int] = []
        stack = [(root, False)]
        while stack:
            node, done = stack.pop()
            if node < self.n_leaves:
                continue
            if done:
                order.append(node)
            else:
                a, b = self.children[node]
                stack.append((node, True))
                stack.append((b, False))
                stack.append((a, False))
        remap = {i: i for i in range(self.n_leaves)}
        steps = []
        for node in order:
            a, b = self.children[node]
            remap[node] = self.n_leaves + len(steps)
            steps.append((remap[a], remap[b]))
        return steps


def _anneal(tree: _Tree, sweeps: int, seed: int, t_start: float = 1.0, t_end: float = 0.02) -> None:
    """Simulated annealing over subtree rotations, minimizing total multiply-adds.

    Rotation at parent P=(X, C) with X=(A, B): either X<-(B, C), P<-(A, X)
    or X<-(A, C), P<-(B, X). P's index set is unchanged, so only the costs
    of P and X move.
    """
    internal = tree.internal()
    if len(internal) < 2 or sweeps <= 0:
        return
    rng = np.random.Generator(np.random.PCG64(seed))
    cost = {p: tree.cost(p) for p in internal}
    total = sum(cost.values())
    n_steps = sweeps * len(internal)
    picks = rng.integers(len(internal), size=n_steps)
    coins = rng.integers(4, size=n_steps)
    accept_u = rng.random(n_steps)
    nl = tree.n_leaves
    for step in range(n_steps):
        temp = t_start * (t_end / t_start) ** (step / n_steps)
        p = internal[picks[step]]
        left, right = tree.children[p]
        side = coins[step] & 1
        x, c = (left, right) if side == 0 else (right, left)
        if x < nl:
            x, c = c, x
            if x < nl:
                continue
        a, b = tree.children[x]
        if coins[step] >> 1:
            a, b = b, a
        # new: X = (b, c), P = (a, X)
        new_x_idx = tree.idx[b] ^ tree.idx[c]
        new_cx = 2 ** _popcount(tree.idx[b] | tree.idx[c])
        new_cp = 2 ** _popcount(tree.idx[a] | new_x_idx)
        old = cost[p] + cost[x]
        new_total = total - old + new_cx + new_cp
        delta = math.log2(new_total) - math.log2(total)
        if delta > 0 and accept_u[step] >= math.exp(-delta / temp):
            continue
        tree.children[x] = (b, c)
        tree.parent[b] = x
        tree.parent[c] = x
        tree.idx[x] = new_x_idx
        tree.children[p] = (a, x)
        tree.parent[a] = p
        cost[x], cost[p] = new_cx, new_cp
        total = new_total


#: networks this small are ordered by exhaustive search instead of greedy + annealing
EXACT_ORDER_MAX_TENSORS = 10


def _optimal_steps(leaves: list[int]) -> list[tuple[int, int]]:
    """Minimum-cost tree by dynamic programming over leaf subsets (O(3^n))."""
    n = len(leaves)
    full = (1 << n) - 1
    idx = [0] * (full + 1)
    for s in range(1, full + 1):
        low = s & -s
        idx[s] = idx[s ^ low] ^ leaves[low.bit_length() - 1]
    best = [0] * (full + 1)
    split = [0] * (full + 1)
    for s in range(1, full + 1):
        if s & (s - 1) == 0:
            continue
        # enumerate splits with the lowest leaf on the left to visit each pair once
        low = s & -s
        rest = s ^ low
        sub = rest
        top = None
        while True:
            a = sub | low
            b = s ^ a
            if b:
                c = best[a] + best[b] + 2 ** _popcount(idx[a] | idx[b])
                if top is None or c < top:
                    top, split[s] = c, a
            if sub == 0:
                break
            sub = (sub - 1) & rest
        best[s] = top
    steps: list[tuple[int, int]] = []

    def emit(s: int) -> int:
        if s & (s - 1) == 0:
            return s.bit_length() - 1
        a = split[s]
        i, j = emit(a), emit(s ^ a)
        steps.append((i, j))
        return n + len(steps) - 1

    emit(full)
    return steps


def _step_costs(
    leaf_labels: Sequence[Sequence[str]],
    steps: Sequence[tuple[int, int]],
    drop: Iterable[str],
    itemsize: int,
) -> tuple[StepCost, ...]:
    bs = _Bitsets(leaf_labels, drop)
    idx = list(bs.leaves)
    out = []
    for a, b in steps:
        k = len(idx)
        res = idx[a] ^ idx[b]
        idx.append(res)
        size_a, size_b, size_r = (2 ** _popcount(m) * itemsize for m in (idx[a], idx[b], res))
        flops = FLOPS_PER_CMADD * 2 ** _popcount(idx[a] | idx[b])
        out.append(StepCost(a, b, k, bs.names(res), flops, size_r, size_a + size_b + size_r))
    return tuple(out)


def _make_plan(
    network_leaves: Sequence[Sequence[str]],
    open_indices: Sequence[str],
    steps: Sequence[tuple[int, int]],
    sliced: Sequence[str],
    broken: Sequence[str],
    itemsize: int,
    budget: int | None,
) -> ContractionPlan:
    sliced = tuple(sorted(sliced, key=label_key))
    broken = tuple(broken)
    per_step = _step_costs(network_leaves, steps, set(sliced) | set(broken), itemsize)
    return ContractionPlan(
        n_tensors=len(network_leaves),
        leaf_labels=tuple(tuple(x) for x in network_leaves),
        open_indices=tuple(open_indices),
        steps=tuple(tuple(s) for s in steps),
        sliced=sliced,
        broken=broken,
        per_step=per_step,
        itemsize=itemsize,
        memory_budget=budget,
    )


def _choose_slices(
    tree: _Tree, bs: _Bitsets, open_mask: int, itemsize: int, budget: int
) -> list[str]:
    """Slice the label that lowers peak width most until ``budget`` holds."""
    sliced = 0
    nodes = tree.idx

    def width(mask: int) -> int:
        return max(_popcount(m & ~mask) for m in nodes)

    while itemsize * 2 ** width(sliced) > budget:
        w = width(sliced)
        cands = 0
        for m in nodes:
            if _popcount(m & ~sliced) == w:
                cands |= m
        cands &= ~sliced & ~open_mask
        if not cands:
            raise InfeasibleError(
                f"cannot fit {itemsize * 2**w} byte intermediate into a {budget} byte budget by slicing"
            )
        best = None
        for b in _bits(cands):
            trial = sliced | (1 << b)
            widths = [_popcount(m & ~trial) for m in nodes]
            new_w = max(widths)
            key = (new_w, widths.count(new_w), label_key(bs.labels[b]))
            if best is None or key < best[0]:
                best = (key, b)
        sliced |= 1 << best[1]
    return [bs.labels[b] for b in _bits(sliced)]


def find_contraction_path(
    network: TensorNetwork,
    memory_budget_bytes: int | None = None,
    effort: int = 4,
    broken: Sequence[str] = (),
    seed: int = 0,
    itemsize: int = 16,
) -> ContractionPlan:
    """Plan a contraction of ``network`` whose largest tensor fits the budget.

    ``broken`` labels are pinned per configuration and therefore removed from
    the planned network. Up to ``EXACT_ORDER_MAX_TENSORS`` tensors the order
    is optimal; larger networks get a greedy tree refined by ``effort``
    annealing sweeps (0 keeps the greedy tree).
    """
    leaf_labels = [t.labels for t in network.tensors]
    all_labels = set(network.edges)
    missing = [lab for lab in broken if lab not in all_labels]
    if missing:
        raise InputError(f"broken labels not in network: {missing}")
    if set(broken) & set(network.open_indices):
        raise InputError("open indices cannot be broken")
    if memory_budget_bytes is not None:
        biggest = max((2 ** len(labs) * itemsize for labs in leaf_labels), default=0)
        if memory_budget_bytes < biggest:
            raise InfeasibleError(f"budget {memory_budget_bytes} B is below the largest gate tensor ({biggest} B)")
        out_bytes = 2 ** len(network.open_indices) * itemsize
        if memory_budget_bytes < out_bytes:
            raise InfeasibleError(f"budget {memory_budget_bytes} B is below the open output tensor ({out_bytes} B)")

    bs = _Bitsets(leaf_labels, broken)
    if len(bs.leaves) <= 1:
        steps = []
    elif len(bs.leaves) <= EXACT_ORDER_MAX_TENSORS:
        steps = _optimal_steps(bs.leaves)
    else:
        tree = _Tree(bs.leaves, _greedy_steps(bs.leaves))
        _anneal(tree, effort, seed)
        steps = tree.to_steps()
    tree = _Tree(bs.leaves, steps)

    sliced: list[str] = []
    if memory_budget_bytes is not None:
        sliced = _choose_slices(tree, bs, bs.mask(network.open_indices), itemsize, memory_budget_bytes)
    return _make_plan(leaf_labels, network.open_indices, steps, sliced, broken, itemsize, memory_budget_bytes)


def with_slices(plan: ContractionPlan, extra: Iterable[str]) -> ContractionPlan:
    """Same tree, additional sliced labels; costs recomputed."""
    extra = [lab for lab in extra if lab not in plan.sliced]
    bad = [lab for lab in extra if lab in plan.broken or lab in plan.open_indices]
    if bad:
        raise InputError(f"cannot slice broken or open labels {bad}")
    return _make_plan(
        plan.leaf_labels,
        plan.open_indices,
        plan.steps,
        list(plan.sliced) + extra,
        plan.broken,
        plan.itemsize,
        plan.memory_budget,
    )


# --------------------------------------------------------------------------- complexity


@dataclass(frozen=True)
class ComplexityReport:
    per_subtask_flops: float
    n_subtasks: int
    total_flops: float
    peak_bytes: float
    per_subtask_traffic: float
    total_traffic: float
    efficiency: float | None = None

    @property
    def total_complex_products(self) -> float:
        return self.total_flops / FLOPS_PER_CMADD

    def to_dict(self) -> dict:
        return {
            "per_subtask_flops": self.per_subtask_flops,
            "n_subtasks": self.n_subtasks,
            "total_flops": self.total_flops,
            "peak_bytes": self.peak_bytes,
            "per_subtask_traffic_bytes": self.per_subtask_traffic,
            "total_traffic_bytes": self.total_traffic,
            "efficiency": self.efficiency,
        }


@dataclass(frozen=True)
class SubtaskCost:
    """Per-subtask cost figures supplied directly rather than from a plan."""

    flops: float
    traffic_bytes: float = 0.0
    peak_bytes: float = 0.0


def estimate_complexity(
    plan: ContractionPlan | SubtaskCost,
    n_subtasks_executed: int,
    device_peak_flops: float | None = None,
    wall_seconds: float | None = None,
) -> ComplexityReport:
    """Scale per-subtask cost by the number of executed subtasks.

    Efficiency is ``total_flops / (P * t)``. Since ``total_flops`` already
    counts 8 real operations per complex product, this is the usual
    ``8 * T_c / (P * t)`` with ``T_c`` in complex products.
    """
    if isinstance(plan, ContractionPlan):
        per, traffic, peak = plan.subtask_flops, plan.subtask_traffic, plan.peak_bytes
    else:
        per, traffic, peak = plan.flops, plan.traffic_bytes, plan.peak_bytes
    total = per * n_subtasks_executed
    eff = None
    if device_peak_flops and wall_seconds:
        eff = total / (device_peak_flops * wall_seconds)
    return ComplexityReport(per, n_subtasks_executed, total, peak, traffic, traffic * n_subtasks_executed, eff)
