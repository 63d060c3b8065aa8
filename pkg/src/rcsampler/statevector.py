"""Dense statevector oracle used as ground truth for small circuits.

Bit convention used throughout the package: qubit 0 is the most significant
bit of a basis-state index, so the string ``"b0 b1 ... b(n-1)"`` read as a
binary number is the amplitude index.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .circuit import EXACT_QUBIT_CAP, Circuit, Gate
from .errors import CapacityError, InputError, NumericFault

_MAGIC = b"QSVD"
_VERSION = 1
# magic, version, n_qubits, reserved
_HEADER = struct.Struct("<4sIII")


@dataclass
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.amplitudes.shape != (2**self.n_qubits,):
            raise InputError(f"expected {2**self.n_qubits} amplitudes, got shape {self.amplitudes.shape}")

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)


def bits_to_index(bits: str | Sequence[int], n_qubits: int) -> int:
    if isinstance(bits, str):
        bits = bits.strip()
        if len(bits) != n_qubits or set(bits) - {"0", "1"}:
            raise InputError(f"bitstring {bits!r} is not a {n_qubits}-bit 0/1 string")
        return int(bits, 2)
    bits = list(bits)
    if len(bits) != n_qubits or any(b not in (0, 1) for b in bits):
        raise InputError(f"expected {n_qubits} bits, got {bits!r}")
    out = 0
    for b in bits:
        out = (out << 1) | b
    return out


def index_to_bits(index: int, n_qubits: int) -> str:
    return format(index, f"0{n_qubits}b")


def zero_state(n_qubits: int) -> StateVector:
    amps = np.zeros(2**n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


def _slot(n: int, assign: dict[int, int]) -> tuple:
    idx: list = [slice(None)] * n
    for q, v in assign.items():
        idx[q] = v
    return tuple(idx)


def apply_gate(psi: np.ndarray, gate: Gate | tuple[np.ndarray, Sequence[int]], n_qubits: int) -> None:
    """Apply a one- or two-qubit unitary in place to ``psi`` (shape ``(2,)*n``)."""
    if isinstance(gate, Gate):
        u, targets = gate.unitary, gate.targets
    else:
        u, targets = gate
    if len(targets) == 1:
        (q,) = targets
        s0, s1 = _slot(n_qubits, {q: 0}), _slot(n_qubits, {q: 1})
        a0 = psi[s0].copy()
        a1 = psi[s1]
        psi[s0] = u[0, 0] * a0 + u[0, 1] * a1
        psi[s1] = u[1, 0] * a0 + u[1, 1] * a1
        return
    q1, q2 = targets
    slots = [_slot(n_qubits, {q1: b >> 1, q2: b & 1}) for b in range(4)]
    parts = [psi[s].copy() for s in slots]
    for row, s in enumerate(slots):
        psi[s] = u[row, 0] * parts[0] + u[row, 1] * parts[1] + u[row, 2] * parts[2] + u[row, 3] * parts[3]


def simulate_exact(
    circuit: Circuit,
    cap: int = EXACT_QUBIT_CAP,
    check_norm: bool = True,
    norm_tol: float = 1e-10,
) -> StateVector:
    """Evolve |0...0> through every layer of ``circuit`` in double precision."""
    n = circuit.n_qubits
    if n > cap:
        raise CapacityError(f"{n} qubits exceeds the exact-simulation cap of {cap}", cap=cap)
    psi = zero_state(n).amplitudes.reshape((2,) * n)
    for i, layer in enumerate(circuit.layers):
        for g in layer:
            apply_gate(psi, g, n)
        if check_norm:
            norm = float(np.vdot(psi, psi).real)
            if not np.isfinite(norm):
                raise NumericFault(f"non-finite norm after layer {i}", step=i)
            if abs(norm - 1.0) > norm_tol:
                raise NumericFault(f"norm drifted to {norm!r} after layer {i}", step=i)
    return StateVector(n, psi.reshape(-1))


def ideal_probability(state: StateVector, bitstring: str | Sequence[int]) -> float:
    i = bits_to_index(bitstring, state.n_qubits)
    return float(abs(state.amplitudes[i]) ** 2)


def dump_state(state: StateVector, path: str | Path) -> None:
    """Write the binary amplitude dump: 16-byte header then little-endian (re, im) float64 pairs."""
    data = np.empty(2 * state.amplitudes.size, dtype="<f8")
    data[0::2] = state.amplitudes.real
    data[1::2] = state.amplitudes.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, state.n_qubits, 0))
        fh.write(data.tobytes())


def load_state(path: str | Path) -> StateVector:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise InputError(f"{path}: truncated header")
    magic, version, n, _ = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION:
        raise InputError(f"{path}: not a QSVD v{_VERSION} file")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != 2 * 2**n:
        raise InputError(f"{path}: expected {2 * 2**n} floats, found {data.size}")
    return StateVector(n, (data[0::2] + 1j * data[1::2]).astype(np.complex128))
