"""Plan execution: exact or broken-edge contraction, parallel subtasks, fidelity."""

from __future__ import annotations

import csv
import logging
import time
import warnings
from concurrent.futures import FIRST_EXCEPTION, ProcessPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .circuit import Circuit
from .errors import InputError, NumericFault, SubtaskError
from .network import (
    FLOPS_PER_CMADD,
    ContractionPlan,
    TensorNetwork,
    circuit_to_network,
    find_contraction_path,
    label_key,
    restrict,
)

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------- broken edges


@dataclass(frozen=True)
class BrokenEdgeConfig:
    """``m`` distinct assignments of the ``K`` broken labels.

    Bits of each assignment follow the order of ``broken_labels``. An empty
    label list with a single empty assignment is exact contraction.
    """

    broken_labels: tuple[str, ...]
    configurations: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        k = len(self.broken_labels)
        if len(set(self.broken_labels)) != k:
            raise InputError(f"repeated broken label in {self.broken_labels}")
        if not 1 <= len(self.configurations) <= 2**k:
            raise InputError(f"need 1..{2**k} configurations for K={k}, got {len(self.configurations)}")
        for c in self.configurations:
            if len(c) != k or any(b not in (0, 1) for b in c):
                raise InputError(f"configuration {c} is not a {k}-bit assignment")
        if len(set(self.configurations)) != len(self.configurations):
            raise InputError("duplicate broken-edge configurations")

    @classmethod
    def exact(cls) -> "BrokenEdgeConfig":
        return cls((), ((),))

    @property
    def K(self) -> int:
        return len(self.broken_labels)

    @property
    def m(self) -> int:
        return len(self.configurations)

    @property
    def predicted_fidelity(self) -> float:
        return self.m * 2.0 ** -self.K

    def assignment(self, i: int) -> dict[str, int]:
        return dict(zip(self.broken_labels, self.configurations[i]))

    def bits(self, i: int) -> str:
        return "".join(map(str, self.configurations[i]))

    def subset(self, idx: Sequence[int]) -> "BrokenEdgeConfig":
        return BrokenEdgeConfig(self.broken_labels, tuple(self.configurations[i] for i in idx))


def gray_code_configs(K: int, m: int, seed: int) -> list[tuple[int, ...]]:
    """First ``m`` entries of the K-bit reflected Gray code, from a seeded start."""
    if K == 0:
        if m != 1:
            raise InputError("K=0 admits exactly one configuration")
        return [()]
    total = 2**K
    if not 1 <= m <= total:
        raise InputError(f"m must lie in 1..{total}, got {m}")
    start = int(np.random.Generator(np.random.PCG64(seed)).integers(total))
    out = []
    for j in range(m):
        i = (start + j) % total
        g = i ^ (i >> 1)
        out.append(tuple((g >> (K - 1 - b)) & 1 for b in range(K)))
    return out


def select_broken_edges(network: TensorNetwork, K: int) -> list[str]:
    """Pick K bonds in the middle of the circuit's time axis.

    Cuts between layers are visited outward from the centre; on each cut
    the wire segments crossing it are taken in qubit order. K up to the
    qubit count therefore lands on a single time slice.
    """
    if K == 0:
        return []
    inner = set(network.inner_labels)
    segs = {lab: w for lab, w in network.wires.items() if lab in inner}
    if K > len(segs):
        raise InputError(f"only {len(segs)} breakable bonds, asked for K={K}")
    L = network.n_layers
    mid = L // 2
    cuts = [mid]
    for d in range(1, L + 1):
        cuts += [t for t in (mid + d, mid - d) if 1 <= t <= L - 1]
    chosen: list[str] = []
    taken: set[str] = set()
    for t in cuts:
        crossing = sorted(
            (lab for lab, w in segs.items() if w.start < t <= w.end and lab not in taken),
            key=lambda lab: (segs[lab].qubit, label_key(lab)),
        )
        for lab in crossing:
            chosen.append(lab)
            taken.add(lab)
            if len(chosen) == K:
                return chosen
    return chosen


def make_broken_config(network: TensorNetwork, K: int, m: int, seed: int) -> BrokenEdgeConfig:
    return BrokenEdgeConfig(tuple(select_broken_edges(network, K)), tuple(gray_code_configs(K, m, seed)))


# --------------------------------------------------------------------------- execution


@dataclass
class SubtaskStats:
    cmadds: int = 0
    peak_bytes: int = 0

    @property
    def flops(self) -> int:
        return FLOPS_PER_CMADD * self.cmadds


def execute_plan(
    network: TensorNetwork,
    plan: ContractionPlan,
    assignment: dict[str, int],
    dtype=np.complex128,
) -> tuple[np.ndarray, SubtaskStats]:
    """Contract one subtask: every sliced and broken label fixed by ``assignment``.

    Returns the output tensor with axes in ``network.open_indices`` order and
    the measured multiply-add count and largest tensor size.
    """
    stats = SubtaskStats()
    live: list[tuple[tuple[str, ...], np.ndarray] | None] = []
    for t in network.tensors:
        labels, data = restrict(t.labels, t.data, assignment)
        data = np.asarray(data, dtype=dtype)
        stats.peak_bytes = max(stats.peak_bytes, data.nbytes)
        live.append((labels, data))
    for step, (a, b) in enumerate(plan.steps):
        la, da = live[a]
        lb, db = live[b]
        live[a] = live[b] = None
        shared = [x for x in la if x in lb]
        union = len(set(la) | set(lb))
        stats.cmadds += 2**union
        res = np.tensordot(da, db, axes=([la.index(x) for x in shared], [lb.index(x) for x in shared]))
        if not np.all(np.isfinite(res)):
            raise NumericFault(f"non-finite value in contraction step {step}", step=step)
        labels = tuple(x for x in la if x not in shared) + tuple(x for x in lb if x not in shared)
        stats.peak_bytes = max(stats.peak_bytes, res.nbytes)
        live.append((labels, res))
    labels, data = live[-1]
    perm = [labels.index(x) for x in network.open_indices]
    return np.ascontiguousarray(np.transpose(data, perm)).reshape(-1), stats


def _check_config(network: TensorNetwork, plan: ContractionPlan, config: BrokenEdgeConfig) -> None:
    labels = set(network.edges)
    missing = [x for x in config.broken_labels if x not in labels]
    if missing:
        raise InputError(f"broken labels not in network: {missing}")
    if set(plan.broken) != set(config.broken_labels):
        raise InputError(f"plan was built for broken set {sorted(plan.broken)}, config has {sorted(config.broken_labels)}")
    if plan.n_tensors != len(network.tensors):
        raise InputError("plan does not belong to this network")


@dataclass(frozen=True)
class Subtask:
    sid: int
    config_index: int
    slice_index: int
    config_bits: str


def enumerate_subtasks(plan: ContractionPlan, config: BrokenEdgeConfig) -> list[Subtask]:
    """Subtasks in ascending (configuration, slice) order; this is the reduction order."""
    out = []
    for ci in range(config.m):
        for si in range(plan.n_slices):
            out.append(Subtask(len(out), ci, si, config.bits(ci)))
    return out


def _assignment(plan: ContractionPlan, config: BrokenEdgeConfig, task: Subtask) -> dict[str, int]:
    a = config.assignment(task.config_index)
    s = len(plan.sliced)
    for j, lab in enumerate(plan.sliced):
        a[lab] = (task.slice_index >> (s - 1 - j)) & 1
    return a


class KahanSum:
    """Elementwise compensated accumulator for (complex) arrays."""

    def __init__(self, shape, dtype=np.complex128):
        self.total = np.zeros(shape, dtype=dtype)
        self._comp = np.zeros(shape, dtype=dtype)

    def add(self, x: np.ndarray) -> None:
        y = x - self._comp
        t = self.total + y
        self._comp = (t - self.total) - y
        self.total = t


@dataclass
class SubtaskTiming:
    subtask_id: int
    config_bits: str
    wall_ms: float
    flops: int
    peak_bytes: int


@dataclass
class ParallelResult:
    amplitudes: np.ndarray
    timings: list[SubtaskTiming] = field(default_factory=list)
    wall_seconds: float = 0.0

    @property
    def flops(self) -> int:
        return sum(t.flops for t in self.timings)

    @property
    def peak_bytes(self) -> int:
        return max((t.peak_bytes for t in self.timings), default=0)

    def write_timings(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["subtask_id", "config_bits", "wall_ms", "flops"])
            for t in self.timings:
                w.writerow([t.subtask_id, t.config_bits, f"{t.wall_ms:.3f}", t.flops])


# worker-process state, installed once per worker by the pool initializer
_WORKER: dict = {}


def _init_worker(network, plan, config, dtype):
    _WORKER.update(network=network, plan=plan, config=config, dtype=dtype)


def _run_subtask(task: Subtask, network=None, plan=None, config=None, dtype=None):
    if network is None:
        network, plan, config, dtype = (_WORKER[k] for k in ("network", "plan", "config", "dtype"))
    t0 = time.perf_counter()
    try:
        amps, stats = execute_plan(network, plan, _assignment(plan, config, task), dtype)
    except Exception as exc:
        raise SubtaskError(
            f"subtask {task.sid} ({task.config_bits or 'exact'}) failed: {exc}",
            task.sid,
            task.config_bits,
            getattr(exc, "step", None),
        ) from exc
    ms = (time.perf_counter() - t0) * 1e3
    return task.sid, amps, SubtaskTiming(task.sid, task.config_bits, ms, stats.flops, stats.peak_bytes)


def run_parallel(
    network: TensorNetwork,
    plan: ContractionPlan,
    config: BrokenEdgeConfig | None = None,
    workers: int = 1,
    dtype=np.complex128,
    chunksize: int = 1,
) -> ParallelResult:
    """Contract every (configuration, slice) subtask and sum them.

    Results are reduced in subtask-id order with compensated summation no
    matter which worker finishes first, so the sum is bit-identical for any
    ``workers``.
    """
    if workers < 1:
        raise InputError(f"workers must be >= 1, got {workers}")
    config = config or BrokenEdgeConfig.exact()
    _check_config(network, plan, config)
    tasks = enumerate_subtasks(plan, config)
    size = 2 ** len(network.open_indices)
    acc = KahanSum(size, dtype=np.complex128)
    timings: list[SubtaskTiming] = []
    t0 = time.perf_counter()

    if workers == 1:
        for task in tasks:
            _, amps, timing = _run_subtask(task, network, plan, config, dtype)
            acc.add(amps.astype(np.complex128, copy=False))
            timings.append(timing)
    else:
        pending: dict[int, tuple[np.ndarray, SubtaskTiming]] = {}
        nxt = 0
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(network, plan, config, dtype)) as pool:
            futures = {pool.submit(_run_subtask, t) for t in tasks}
            while futures:
                done, futures = wait(futures, return_when=FIRST_EXCEPTION)
                for fut in done:
                    exc = fut.exception()
                    if exc is not None:
                        for f in futures:
                            f.cancel()
                        raise exc
                    sid, amps, timing = fut.result()
                    pending[sid] = (amps, timing)
                while nxt in pending:
                    amps, timing = pending.pop(nxt)
                    acc.add(amps.astype(np.complex128, copy=False))
                    timings.append(timing)
                    nxt += 1
    return ParallelResult(acc.total, timings, time.perf_counter() - t0)


def contract(
    network: TensorNetwork,
    plan: ContractionPlan,
    config: BrokenEdgeConfig | None = None,
    workers: int = 1,
    dtype=np.complex128,
) -> np.ndarray:
    """Amplitudes over the open indices: exact when ``config`` is None,
    otherwise the partial path sum over ``config.configurations``."""
    return run_parallel(network, plan, config, workers, dtype).amplitudes


def per_config_amplitudes(
    network: TensorNetwork, plan: ContractionPlan, config: BrokenEdgeConfig, dtype=np.complex128
) -> np.ndarray:
    """One row of amplitudes per configuration (slices summed within each row)."""
    _check_config(network, plan, config)
    rows = []
    for ci in range(config.m):
        rows.append(contract(network, plan, config.subset([ci]), dtype=dtype))
    return np.array(rows)


# --------------------------------------------------------------------------- fidelity


def state_fidelity(approx: np.ndarray, exact: np.ndarray) -> float:
    """|<exact|approx>|^2 / (<exact|exact> <approx|approx>)."""
    approx = np.asarray(approx).ravel()
    exact = np.asarray(exact).ravel()
    if approx.shape != exact.shape:
        raise InputError(f"amplitude collections differ in size: {approx.shape} vs {exact.shape}")
    ee = float(np.vdot(exact, exact).real)
    if ee == 0:
        raise InputError("exact amplitudes have zero norm")
    aa = float(np.vdot(approx, approx).real)
    if aa == 0:
        warnings.warn("approximate amplitudes have zero norm; fidelity set to 0", RuntimeWarning, stacklevel=2)
        return 0.0
    ov = np.vdot(exact, approx)
    return float(min(1.0, abs(ov) ** 2 / (ee * aa)))


# --------------------------------------------------------------------------- pipeline


@dataclass
class Approximation:
    """Everything produced by one broken-edge simulation of a circuit."""

    network: TensorNetwork
    plan: ContractionPlan
    config: BrokenEdgeConfig
    result: ParallelResult

    @property
    def amplitudes(self) -> np.ndarray:
        return self.result.amplitudes


def simulate_approximate(
    circuit: Circuit,
    K: int = 0,
    m: int = 1,
    config_seed: int = 0,
    open_qubits: Sequence[int] | None = None,
    output_bits: dict[int, int] | None = None,
    memory_budget: int | None = None,
    effort: int = 4,
    workers: int = 1,
    dtype=np.complex128,
    plan_seed: int = 0,
) -> Approximation:
    """Network, broken-edge choice, plan and parallel contraction in one call."""
    network = circuit_to_network(circuit, open_qubits, output_bits)
    config = make_broken_config(network, K, m, config_seed)
    itemsize = np.dtype(dtype).itemsize
    plan = find_contraction_path(network, memory_budget, effort, config.broken_labels, plan_seed, itemsize)
    result = run_parallel(network, plan, config, workers, dtype)
    return Approximation(network, plan, config, result)
