"""Candidate sets, direct and top-k sampling, XEB and the statistics around it.

Bitstrings are carried as integer basis-state indices (qubit 0 is the most
significant bit); ``index_to_bits`` turns them back into strings.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, InputError
from .statevector import index_to_bits

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CandidateSet:
    """``M`` groups of ``2**l`` strings sharing their non-open bits.

    ``strings[L, i]`` is the basis index of the i-th open assignment in
    group L; ``probs`` (optional) holds the matching approximate
    probabilities.
    """

    n: int
    open_qubits: tuple[int, ...]
    fixed: np.ndarray
    strings: np.ndarray
    probs: np.ndarray | None = None

    @property
    def l(self) -> int:
        return len(self.open_qubits)

    @property
    def M(self) -> int:
        return int(self.strings.shape[0])

    @property
    def size(self) -> int:
        return int(self.strings.size)

    def with_probabilities(self, probs: np.ndarray) -> "CandidateSet":
        probs = np.asarray(probs, dtype=float)
        if probs.shape != self.strings.shape:
            raise InputError(f"probabilities of shape {probs.shape} do not match groups {self.strings.shape}")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise InputError("candidate probabilities must be finite and non-negative")
        return CandidateSet(self.n, self.open_qubits, self.fixed, self.strings, probs)

    def evaluate(self, amplitudes: np.ndarray) -> "CandidateSet":
        """Attach ``|amplitude|**2`` looked up from a full 2**n amplitude array."""
        amplitudes = np.asarray(amplitudes).ravel()
        if amplitudes.size != 2**self.n:
            raise InputError(f"need {2**self.n} amplitudes, got {amplitudes.size}")
        return self.with_probabilities(np.abs(amplitudes[self.strings]) ** 2)

    def open_offsets(self) -> np.ndarray:
        """Bit pattern contributed by each open assignment, in enumeration order."""
        i = np.arange(2**self.l, dtype=np.int64)
        out = np.zeros_like(i)
        for j, q in enumerate(self.open_qubits):
            bit = (i >> (self.l - 1 - j)) & 1
            out |= bit << (self.n - 1 - q)
        return out


def build_candidate_set(n: int, open_qubits: Sequence[int], M: int, seed: int) -> CandidateSet:
    """Enumerate the open qubits exhaustively and draw the other bits uniformly, M times."""
    open_qubits = tuple(int(q) for q in open_qubits)
    l = len(open_qubits)
    if len(set(open_qubits)) != l:
        raise ConfigError(f"duplicate open qubits in {open_qubits}")
    if any(not 0 <= q < n for q in open_qubits):
        raise ConfigError(f"open qubits {open_qubits} outside 0..{n - 1}")
    if M < 1:
        raise ConfigError(f"M must be >= 1, got {M}")
    if l == n and M > 1:
        raise ConfigError("with every qubit open all groups would coincide; use M=1")
    if n > 62:
        raise ConfigError("bitstrings are stored as int64 indices; n must be <= 62")
    rest = [q for q in range(n) if q not in open_qubits]
    fixed = np.zeros(M, dtype=np.int64)
    if rest:
        rng = np.random.Generator(np.random.PCG64(seed))
        bits = rng.integers(0, 2, size=(M, len(rest)), dtype=np.int64)
        for j, q in enumerate(rest):
            fixed |= bits[:, j] << (n - 1 - q)
    dupes = M - np.unique(fixed).size
    if dupes:
        log.info("candidate set: %d of %d groups repeat an earlier fixed substring", dupes, M)
    cs = CandidateSet(n, open_qubits, fixed, np.empty((M, 0), dtype=np.int64))
    strings = fixed[:, None] | cs.open_offsets()[None, :]
    return CandidateSet(n, open_qubits, fixed, strings)


class Provenance(str, enum.Enum):
    DIRECT = "direct"
    TOP_K = "top_k"


@dataclass(frozen=True)
class SampleSet:
    n: int
    bitstrings: np.ndarray
    provenance: Provenance
    k: int | None = None

    def __len__(self) -> int:
        return int(self.bitstrings.size)

    def as_strings(self) -> list[str]:
        return [index_to_bits(int(i), self.n) for i in self.bitstrings]


QSource = np.ndarray | Mapping[int, float] | Callable[[int], float]


def _lookup_q(q: QSource, idx: np.ndarray, n: int) -> np.ndarray:
    if isinstance(q, np.ndarray):
        if q.size != 2**n:
            raise InputError(f"ideal probability array has {q.size} entries, expected {2**n}")
        return q.ravel()[idx]
    out = np.empty(idx.size)
    for j, i in enumerate(idx.tolist()):
        try:
            v = q[i] if isinstance(q, Mapping) else q(i)
        except (KeyError, IndexError):
            v = None
        if v is None:
            raise InputError(f"no ideal probability for sample {index_to_bits(i, n)}")
        out[j] = v
    return out


def xeb(samples: SampleSet | np.ndarray, q: QSource, n: int | None = None) -> float:
    """Linear cross-entropy benchmark ``2**n / |S| * sum q(s) - 1``."""
    if isinstance(samples, SampleSet):
        n = samples.n
        idx = samples.bitstrings
    else:
        idx = np.asarray(samples, dtype=np.int64).ravel()
        if n is None:
            raise InputError("n is required when samples are a bare index array")
    if idx.size == 0:
        raise InputError("XEB needs at least one sample")
    vals = _lookup_q(q, idx, n)
    return float(2.0**n * np.mean(vals) - 1.0)


def top_k_select(candidates: CandidateSet, k: int) -> SampleSet:
    """The ``k`` candidates with the largest approximate probability.

    Ties go to the lexicographically smaller bitstring. The result is sorted
    by (probability desc, bitstring asc), so it does not depend on the order
    of groups in the candidate set.
    """
    if candidates.probs is None:
        raise InputError("candidate set carries no probabilities")
    total = candidates.size
    if not 1 <= k <= total:
        raise InputError(f"k must lie in 1..{total}, got {k}")
    p = candidates.probs.ravel()
    s = candidates.strings.ravel()
    if k < total:
        # threshold = k-th largest value; everything above it is in, ties resolved by string
        part = np.argpartition(-p, k - 1)
        thr = p[part[k - 1]]
        above = np.flatnonzero(p > thr)
        tied = np.flatnonzero(p == thr)
        tied = tied[np.argsort(s[tied], kind="stable")][: k - above.size]
        pick = np.concatenate([above, tied])
    else:
        pick = np.arange(total)
    order = np.lexsort((s[pick], -p[pick]))
    return SampleSet(candidates.n, s[pick][order], Provenance.TOP_K, k)


def direct_sample(candidates: CandidateSet, rng_seed: int) -> SampleSet:
    """One draw per group from its normalized approximate probabilities."""
    if candidates.probs is None:
        raise InputError("candidate set carries no probabilities")
    p = candidates.probs
    totals = p.sum(axis=1)
    bad = np.flatnonzero(~(totals > 0))
    if bad.size:
        raise InputError(f"group {int(bad[0])} has zero total probability")
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    u = rng.random(candidates.M) * totals
    cdf = np.cumsum(p, axis=1)
    choice = (cdf <= u[:, None]).sum(axis=1)
    # guard against u landing on the rounded total
    choice = np.minimum(choice, p.shape[1] - 1)
    picked = candidates.strings[np.arange(candidates.M), choice]
    return SampleSet(candidates.n, picked, Provenance.DIRECT)


def predicted_topk_xeb(F: float, candidate_size: int, k: int) -> float:
    if not 0 <= F <= 1:
        raise InputError(f"fidelity must lie in [0, 1], got {F}")
    if not 1 <= k <= candidate_size:
        raise InputError(f"k must lie in 1..{candidate_size}, got {k}")
    return F * math.log(candidate_size / k)


def cost_reduction(candidate_size: float, k: float) -> float:
    """Fraction of simulation cost saved by top-k: ``1 - 1/ln(|S|/k)``."""
    return 1.0 - 1.0 / math.log(candidate_size / k)


@dataclass(frozen=True)
class TopKLaw:
    xeb: float
    threshold: float
    tail_expectation: float


def ideal_topk_law(alpha: float) -> TopKLaw:
    """Porter-Thomas prediction for the XEB of the top ``alpha`` fraction.

    The cut-off on ``x = N q`` solves ``exp(-t) = alpha``; the tail mass is
    ``integral_t^inf x exp(-x) dx = alpha (1 - ln alpha)`` and the XEB is
    ``tail / alpha - 1 = -ln alpha``.
    """
    if not 0 < alpha <= 1:
        raise InputError(f"alpha must lie in (0, 1], got {alpha}")
    t = -math.log(alpha)
    tail = alpha * (1.0 + t)
    return TopKLaw(xeb=tail / alpha - 1.0, threshold=t, tail_expectation=tail)


def pearson_r(p: Sequence[float], q: Sequence[float]) -> float:
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.size != q.size or p.size < 2:
        raise InputError(f"need two equal-length vectors of length >= 2, got {p.size} and {q.size}")
    dp = p - p.mean()
    dq = q - q.mean()
    sp = math.sqrt(float(dp @ dp))
    sq = math.sqrt(float(dq @ dq))
    if sp == 0 or sq == 0:
        raise InputError("correlation is undefined for a constant vector")
    return float(np.clip((dp @ dq) / (sp * sq), -1.0, 1.0))


def amplitude_correlation(approx: np.ndarray, exact: np.ndarray, part: str = "real") -> float:
    """Pearson r between real (or imaginary) parts of two amplitude arrays."""
    if part not in ("real", "imag"):
        raise InputError(f"part must be 'real' or 'imag', got {part!r}")
    f = np.real if part == "real" else np.imag
    return pearson_r(f(np.asarray(approx)), f(np.asarray(exact)))


def _kolmogorov_sf(x: float) -> float:
    """Survival function of the Kolmogorov distribution."""
    if x <= 0:
        return 1.0
    if x < 1.18:
        # small-x form converges faster
        y = math.exp(-(math.pi**2) / (8 * x * x))
        s = sum(y ** ((2 * j - 1) ** 2) for j in range(1, 8))
        return 1.0 - math.sqrt(2 * math.pi) / x * s
    s = 0.0
    for j in range(1, 101):
        term = (-1) ** (j - 1) * math.exp(-2 * j * j * x * x)
        s += term
        if abs(term) < 1e-16:
            break
    return min(1.0, max(0.0, 2 * s))


@dataclass(frozen=True)
class PorterThomasFit:
    ks_statistic: float
    p_value: float
    mean: float
    count: int


def porter_thomas_check(probs: Sequence[float], n: int) -> PorterThomasFit:
    """One-sample KS test of ``2**n * q`` against Exponential(1).

    The p-value uses the asymptotic Kolmogorov law with Stephens'
    finite-sample scaling ``(sqrt(N) + 0.12 + 0.11/sqrt(N)) * D``.
    """
    x = np.sort(np.asarray(probs, dtype=float).ravel() * 2.0**n)
    cnt = x.size
    if cnt < 1000:
        raise InputError(f"need at least 1000 probabilities, got {cnt}")
    cdf = -np.expm1(-x)
    i = np.arange(1, cnt + 1)
    d = float(max(np.max(i / cnt - cdf), np.max(cdf - (i - 1) / cnt)))
    rt = math.sqrt(cnt)
    pval = _kolmogorov_sf((rt + 0.12 + 0.11 / rt) * d)
    return PorterThomasFit(d, pval, float(x.mean()), cnt)


# --------------------------------------------------------------------------- reports and files


@dataclass
class MetricsReport:
    xeb: float
    fidelity: float
    predicted_xeb: float
    pearson_r: float
    pt_ks_statistic: float
    candidate_size: int
    k: int
    direct_xeb: float | None = None
    pt_p_value: float | None = None
    predicted_fidelity: float | None = None
    inputs: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.xeb / self.fidelity if self.fidelity else float("nan")

    def recomputed_prediction(self) -> float:
        return predicted_topk_xeb(self.fidelity, self.candidate_size, self.k)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratio"] = self.ratio
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


METRICS_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "MetricsReport",
    "type": "object",
    "required": [
        "xeb",
        "fidelity",
        "predicted_xeb",
        "pearson_r",
        "pt_ks_statistic",
        "ratio",
        "candidate_size",
        "k",
        "inputs",
    ],
    "properties": {
        "xeb": {"type": "number"},
        "fidelity": {"type": "number", "minimum": 0, "maximum": 1},
        "predicted_xeb": {"type": "number"},
        "pearson_r": {"type": "number", "minimum": -1, "maximum": 1},
        "pt_ks_statistic": {"type": "number", "minimum": 0, "maximum": 1},
        "pt_p_value": {"type": ["number", "null"]},
        "ratio": {"type": ["number", "null"]},
        "direct_xeb": {"type": ["number", "null"]},
        "predicted_fidelity": {"type": ["number", "null"]},
        "candidate_size": {"type": "integer", "minimum": 1},
        "k": {"type": "integer", "minimum": 1},
        "inputs": {
            "type": "object",
            "required": ["n", "l", "M", "K", "m", "k", "seeds"],
        },
    },
}


def write_samples(samples: SampleSet, path: str | Path, extra: Mapping[str, object] | None = None) -> None:
    lines = [f"# provenance: {samples.provenance.value}", f"# n_qubits: {samples.n}"]
    if samples.k is not None:
        lines.append(f"# k: {samples.k}")
    for key, val in (extra or {}).items():
        lines.append(f"# {key}: {val}")
    lines.extend(samples.as_strings())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_samples(path: str | Path) -> SampleSet:
    header: dict[str, str] = {}
    rows: list[str] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            header[key.strip()] = val.strip()
        elif line.strip():
            rows.append(line.strip())
    n = int(header.get("n_qubits", len(rows[0]) if rows else 0))
    idx = np.array([int(r, 2) for r in rows], dtype=np.int64)
    k = int(header["k"]) if "k" in header else None
    return SampleSet(n, idx, Provenance(header.get("provenance", "direct")), k)
