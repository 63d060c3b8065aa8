"""Sycamore-style random circuits: gate set, coupler topologies, generation and JSON I/O."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from math import pi, sqrt
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, InputError

#: Qubit count above which the statevector oracle refuses to run by default.
EXACT_QUBIT_CAP = 24


class GateKind(str, enum.Enum):
    SQRT_X = "SqrtX"
    SQRT_Y = "SqrtY"
    SQRT_W = "SqrtW"
    TWO_QUBIT = "TwoQubit"


SINGLE_QUBIT_KINDS = (GateKind.SQRT_X, GateKind.SQRT_Y, GateKind.SQRT_W)


def fsim(theta: float, phi: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array(
        [
            [1, 0, 0, 0],
            [0, c, -1j * s, 0],
            [0, -1j * s, c, 0],
            [0, 0, 0, np.exp(-1j * phi)],
        ],
        dtype=np.complex128,
    )


def _sqrt_pauli(p: np.ndarray) -> np.ndarray:
    # any P with P @ P == I and eigenvalues +-1
    return 0.5 * (1 + 1j) * np.eye(2) + 0.5 * (1 - 1j) * p


PAULI_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
PAULI_W = (PAULI_X + PAULI_Y) / sqrt(2)

# The entangler is a one-line swap: change the fsim arguments here.
_UNITARIES = {
    GateKind.SQRT_X: _sqrt_pauli(PAULI_X),
    GateKind.SQRT_Y: _sqrt_pauli(PAULI_Y),
    GateKind.SQRT_W: _sqrt_pauli(PAULI_W),
    GateKind.TWO_QUBIT: fsim(pi / 2, pi / 6),
}
for _u in _UNITARIES.values():
    _u.setflags(write=False)


def gate_unitary(kind: GateKind | str) -> np.ndarray:
    """Return the fixed (read-only) matrix for a gate kind."""
    try:
        return _UNITARIES[GateKind(kind)]
    except ValueError:
        raise InputError(f"unsupported gate kind {kind!r}") from None


@dataclass(frozen=True, eq=False)
class Gate:
    kind: GateKind
    targets: tuple[int, ...]
    unitary: np.ndarray

    def __post_init__(self):
        dim = 2 ** len(self.targets)
        if len(self.targets) not in (1, 2) or self.unitary.shape != (dim, dim):
            raise InputError(
                f"{self.kind.value} gate on {len(self.targets)} target(s) "
                f"has matrix of shape {self.unitary.shape}"
            )
        if len(set(self.targets)) != len(self.targets):
            raise InputError(f"repeated target in {self.targets}")

    def __eq__(self, other):
        if not isinstance(other, Gate):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.targets == other.targets
            and np.array_equal(self.unitary, other.unitary)
        )

    def __hash__(self):
        return hash((self.kind, self.targets))


def make_gate(kind: GateKind | str, targets: Sequence[int]) -> Gate:
    kind = GateKind(kind)
    return Gate(kind, tuple(int(t) for t in targets), gate_unitary(kind))


# --------------------------------------------------------------------------- topology


@dataclass(frozen=True)
class Topology:
    """A qubit graph together with the order in which its coupler patterns fire.

    ``patterns`` maps a letter to a set of disjoint qubit pairs, ``sequence``
    is cycled over the two-qubit layers (e.g. ``"ABCDCDAB"`` for grids).
    """

    name: str
    n_qubits: int
    patterns: dict[str, tuple[tuple[int, int], ...]]
    sequence: str

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted({pair for pairs in self.patterns.values() for pair in pairs})

    def pattern_for_cycle(self, cycle: int) -> str:
        return self.sequence[cycle % len(self.sequence)]


def _line(n: int) -> Topology:
    a = tuple((i, i + 1) for i in range(0, n - 1, 2))
    b = tuple((i, i + 1) for i in range(1, n - 1, 2))
    return Topology("line", n, {"A": a, "B": b}, "AB")


def _ring(n: int) -> Topology:
    if n <= 2:
        return Topology("ring", n, _line(n).patterns, "AB")
    a = tuple((i, i + 1) for i in range(0, n - 1, 2))
    b = tuple((i, i + 1) for i in range(1, n - 1, 2))
    if n % 2 == 0:
        return Topology("ring", n, {"A": a, "B": b + ((0, n - 1),)}, "AB")
    return Topology("ring", n, {"A": a, "B": b, "C": ((0, n - 1),)}, "ABC")


def _grid_patterns(coords: dict[tuple[int, int], int]) -> dict[str, tuple[tuple[int, int], ...]]:
    pats: dict[str, list[tuple[int, int]]] = {"A": [], "B": [], "C": [], "D": []}
    for (r, c), q in sorted(coords.items()):
        right = coords.get((r, c + 1))
        if right is not None:
            pats["A" if c % 2 == 0 else "B"].append((min(q, right), max(q, right)))
        down = coords.get((r + 1, c))
        if down is not None:
            pats["C" if r % 2 == 0 else "D"].append((min(q, down), max(q, down)))
    return {k: tuple(sorted(v)) for k, v in pats.items()}


def _grid(rows: int, cols: int, missing: Iterable[tuple[int, int]] = (), name: str | None = None) -> Topology:
    skip = set(missing)
    cells = [(r, c) for r in range(rows) for c in range(cols) if (r, c) not in skip]
    coords = {rc: i for i, rc in enumerate(cells)}
    return Topology(name or f"grid({rows},{cols})", len(cells), _grid_patterns(coords), "ABCDCDAB")


_GRID_RE = re.compile(r"^grid\(\s*(\d+)\s*,\s*(\d+)\s*\)$")


def parse_topology(spec: str | Topology, n_qubits: int) -> Topology:
    """Build a topology from ``"line"``, ``"ring"``, ``"grid(R,C)"`` or ``"sycamore53"``."""
    if isinstance(spec, Topology):
        topo = spec
    else:
        s = spec.strip().lower()
        if s == "line":
            topo = _line(n_qubits)
        elif s == "ring":
            topo = _ring(n_qubits)
        elif s == "sycamore53":
            # 6x9 grid with one dead site, like the 53-qubit device
            topo = _grid(6, 9, missing=[(0, 5)], name="sycamore53")
        elif m := _GRID_RE.match(s):
            topo = _grid(int(m.group(1)), int(m.group(2)))
        else:
            raise ConfigError(f"unknown topology {spec!r}")
    if topo.n_qubits != n_qubits:
        raise ConfigError(f"topology {topo.name} has {topo.n_qubits} qubits, circuit asks for {n_qubits}")
    if not topo.edges:
        raise ConfigError(f"topology {topo.name} on {n_qubits} qubit(s) has no couplers")
    return topo


# --------------------------------------------------------------------------- circuit


@dataclass(frozen=True)
class Circuit:
    """Immutable layered circuit.

    Even layers hold one random single-qubit gate per qubit, odd layers hold
    the two-qubit gates of that cycle's coupler pattern.
    """

    n_qubits: int
    layers: tuple[tuple[Gate, ...], ...]
    topology: str = "line"
    seed: int = 0
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for i, layer in enumerate(self.layers):
            seen: set[int] = set()
            for g in layer:
                for t in g.targets:
                    if not 0 <= t < self.n_qubits:
                        raise InputError(f"layer {i}: target {t} outside 0..{self.n_qubits - 1}")
                    if t in seen:
                        raise InputError(f"layer {i}: qubit {t} used twice")
                    seen.add(t)

    @property
    def n_cycles(self) -> int:
        return (len(self.layers) + 1) // 2

    @property
    def coupler_pattern(self) -> list[str]:
        """Pattern letter of each two-qubit layer (empty for hand-built circuits)."""
        try:
            topo = parse_topology(self.topology, self.n_qubits)
        except ConfigError:
            return []
        return [topo.pattern_for_cycle(c) for c in range(len(self.layers) // 2)]

    def gates(self) -> Iterable[Gate]:
        for layer in self.layers:
            yield from layer

    def to_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "seed": self.seed,
            "topology": self.topology,
            "layers": [
                {
                    "gates": [
                        {
                            "kind": g.kind.value,
                            "targets": list(g.targets),
                            "matrix": [[float(z.real), float(z.imag)] for z in g.unitary.ravel()],
                        }
                        for g in layer
                    ]
                }
                for layer in self.layers
            ],
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, data: dict) -> "Circuit":
        try:
            layers = []
            for layer in data["layers"]:
                gates = []
                for g in layer["gates"]:
                    flat = np.array([complex(re_, im) for re_, im in g["matrix"]])
                    dim = int(round(sqrt(flat.size)))
                    u = flat.reshape(dim, dim)
                    u.setflags(write=False)
                    gates.append(Gate(GateKind(g["kind"]), tuple(g["targets"]), u))
                layers.append(tuple(gates))
            return cls(int(data["n_qubits"]), tuple(layers), data.get("topology", "line"), int(data.get("seed", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"malformed circuit document: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "Circuit":
        return cls.from_dict(json.loads(text))


def circuit_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed & (2**64 - 1))))


def gen_random_circuit(
    n_qubits: int,
    n_layers: int,
    topology: str | Topology = "line",
    seed: int = 0,
    exact_cap: int = EXACT_QUBIT_CAP,
) -> Circuit:
    """Generate ``n_layers`` cycles of (random 1q layer, coupler layer).

    Single-qubit gates are drawn uniformly from {sqrt X, sqrt Y, sqrt W},
    never repeating the previous kind on the same qubit. Each slot consumes
    exactly one draw from a PCG64 stream seeded by ``seed``.
    """
    if n_qubits < 2:
        raise ConfigError(f"need at least 2 qubits, got {n_qubits}")
    if n_layers < 1:
        raise ConfigError(f"need at least 1 layer, got {n_layers}")
    topo = parse_topology(topology, n_qubits)
    rng = circuit_rng(seed)

    prev: list[GateKind | None] = [None] * n_qubits
    layers: list[tuple[Gate, ...]] = []
    for cycle in range(n_layers):
        singles = []
        for q in range(n_qubits):
            if prev[q] is None:
                kind = SINGLE_QUBIT_KINDS[int(rng.integers(3))]
            else:
                choices = [k for k in SINGLE_QUBIT_KINDS if k is not prev[q]]
                kind = choices[int(rng.integers(2))]
            prev[q] = kind
            singles.append(make_gate(kind, (q,)))
        layers.append(tuple(singles))
        pairs = topo.patterns[topo.pattern_for_cycle(cycle)]
        layers.append(tuple(make_gate(GateKind.TWO_QUBIT, p) for p in pairs))

    meta = {"exceeds_exact_cap": n_qubits > exact_cap, "exact_cap": exact_cap}
    return Circuit(n_qubits, tuple(layers), topo.name, seed, meta)
