"""Experiment orchestration behind the command-line front end."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .circuit import EXACT_QUBIT_CAP, Circuit, gen_random_circuit
from .engine import (
    BrokenEdgeConfig,
    make_broken_config,
    run_parallel,
    state_fidelity,
)
from .errors import CapacityError, ConfigError, NumericFault, RegressionError
from .metrics import (
    MetricsReport,
    amplitude_correlation,
    build_candidate_set,
    direct_sample,
    porter_thomas_check,
    predicted_topk_xeb,
    top_k_select,
    write_samples,
    xeb,
)
from .network import ContractionPlan, TensorNetwork, circuit_to_network, find_contraction_path
from .statevector import simulate_exact

log = logging.getLogger(__name__)

_PRECISIONS = {"f64": np.complex128, "f32": np.complex64}

# JSON section -> field names; the flat dataclass below is what the code uses
_SECTIONS = {
    "circuit": ("n_qubits", "n_layers", "topology"),
    "approximation": ("K", "m", "broken_policy"),
    "candidates": ("open_qubits", "M"),
    "postprocess": ("k",),
    "execution": ("workers", "memory_budget", "precision", "effort"),
    "output": ("out",),
}


@dataclass
class ExperimentConfig:
    n_qubits: int = 12
    n_layers: int = 14
    topology: str = "line"
    seed: int = 0
    K: int = 0
    m: int = 1
    broken_policy: str = "bulk"
    open_qubits: list[int] | None = None
    M: int = 1
    k: int | None = None
    workers: int = 1
    memory_budget: int | None = None
    precision: str = "f64"
    effort: int = 4
    out: str = "out"

    @property
    def open_list(self) -> list[int]:
        return list(range(self.n_qubits)) if self.open_qubits is None else list(self.open_qubits)

    @property
    def candidate_size(self) -> int:
        return self.M * 2 ** len(self.open_list)

    @property
    def dtype(self):
        return _PRECISIONS[self.precision]

    def seeds(self) -> dict[str, int]:
        """Independent sub-seeds split off the master seed."""
        kids = np.random.SeedSequence(self.seed).spawn(3)
        names = ("broken", "candidates", "sampling")
        out = {"circuit": self.seed}
        out.update({nm: int(c.generate_state(1, np.uint64)[0]) for nm, c in zip(names, kids)})
        return out

    def validate(self) -> None:
        if self.n_qubits < 2:
            raise ConfigError("n_qubits must be >= 2")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.K < 0:
            raise ConfigError("K must be >= 0")
        if not 1 <= self.m <= 2**self.K:
            raise ConfigError(f"m must lie in 1..2^K = {2**self.K}, got {self.m}")
        if self.broken_policy != "bulk":
            raise ConfigError(f"unknown broken-edge policy {self.broken_policy!r}")
        ops = self.open_list
        if len(set(ops)) != len(ops) or any(not 0 <= q < self.n_qubits for q in ops):
            raise ConfigError(f"open_qubits must be distinct qubits in 0..{self.n_qubits - 1}")
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if len(ops) == self.n_qubits and self.M > 1:
            raise ConfigError("M must be 1 when every qubit is open")
        if self.k is not None and not 1 <= self.k <= self.candidate_size:
            raise ConfigError(f"k must satisfy 1 <= k <= |S| = M*2^l = {self.candidate_size}, got {self.k}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.precision not in _PRECISIONS:
            raise ConfigError(f"precision must be one of {sorted(_PRECISIONS)}")
        if self.effort < 0:
            raise ConfigError("effort must be >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        flat: dict = {}
        known = {f.name for f in fields(cls)}
        for key, val in data.items():
            if key in _SECTIONS and isinstance(val, dict):
                for sub, v in val.items():
                    if sub not in _SECTIONS[key]:
                        raise ConfigError(f"unknown key {key}.{sub}")
                    flat[sub] = v
            elif key in known:
                flat[key] = val
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            return cls(**flat)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def to_dict(self) -> dict:
        flat = asdict(self)
        out: dict = {"seed": flat.pop("seed")}
        for section, keys in _SECTIONS.items():
            out[section] = {k: flat[k] for k in keys}
        return out


# --------------------------------------------------------------------------- shared setup


@dataclass
class Workload:
    circuit: Circuit
    network: TensorNetwork
    config: BrokenEdgeConfig
    plan: ContractionPlan


def prepare(cfg: ExperimentConfig) -> Workload:
    """Circuit, all-open network, broken-edge choice and plan for a config.

    Every output leg stays open: the candidate groups are then gathered
    from one batched contraction instead of one contraction per group.
    """
    cfg.validate()
    seeds = cfg.seeds()
    circuit = gen_random_circuit(cfg.n_qubits, cfg.n_layers, cfg.topology, seeds["circuit"])
    network = circuit_to_network(circuit, dtype=np.complex128)
    bconf = make_broken_config(network, cfg.K, cfg.m, seeds["broken"])
    itemsize = np.dtype(cfg.dtype).itemsize
    plan = find_contraction_path(network, cfg.memory_budget, cfg.effort, bconf.broken_labels, 0, itemsize)
    return Workload(circuit, network, bconf, plan)


# --------------------------------------------------------------------------- run


def cmd_run(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> MetricsReport:
    """Full pipeline; writes circuit, plan, samples, metrics and timing files."""
    cfg.validate()
    if cfg.precision != "f64":
        raise ConfigError("f32 precision is for benchmarks only; run compares against the f64 oracle")
    if cfg.n_qubits > EXACT_QUBIT_CAP:
        raise CapacityError(f"run needs the statevector oracle, capped at {EXACT_QUBIT_CAP} qubits", EXACT_QUBIT_CAP)
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = cfg.seeds()

    wl = prepare(cfg)
    (out / "circuit.json").write_text(wl.circuit.to_json(indent=1), encoding="utf-8")
    (out / "plan.json").write_text(wl.plan.to_json(indent=1), encoding="utf-8")

    res = run_parallel(wl.network, wl.plan, wl.config, cfg.workers, cfg.dtype)
    res.write_timings(out / "timings.csv")
    approx = res.amplitudes

    exact = simulate_exact(wl.circuit)
    q = exact.probabilities
    F = state_fidelity(approx, exact.amplitudes)

    cands = build_candidate_set(cfg.n_qubits, cfg.open_list, cfg.M, seeds["candidates"]).evaluate(approx)
    direct = direct_sample(cands, seeds["sampling"])
    direct_xeb = xeb(direct, q)
    k = cfg.k if cfg.k is not None else cfg.M
    top = top_k_select(cands, k)
    top_xeb = xeb(top, q)

    try:
        r = amplitude_correlation(approx, exact.amplitudes)
    except ValueError:
        r = float("nan")
    pt = porter_thomas_check(q, cfg.n_qubits) if q.size >= 1000 else None

    report = MetricsReport(
        xeb=top_xeb,
        fidelity=F,
        predicted_xeb=predicted_topk_xeb(F, cands.size, k),
        pearson_r=r,
        pt_ks_statistic=pt.ks_statistic if pt else float("nan"),
        candidate_size=cands.size,
        k=k,
        direct_xeb=direct_xeb,
        pt_p_value=pt.p_value if pt else None,
        predicted_fidelity=wl.config.predicted_fidelity,
        inputs={
            "n": cfg.n_qubits,
            "layers": cfg.n_layers,
            "topology": cfg.topology,
            "l": len(cfg.open_list),
            "open_qubits": cfg.open_list,
            "M": cfg.M,
            "K": cfg.K,
            "m": cfg.m,
            "k": k,
            "broken_labels": list(wl.config.broken_labels),
            "seeds": seeds,
        },
    )
    write_samples(top, out / "samples.txt", {"seed": cfg.seed, "candidate_size": cands.size})
    write_samples(direct, out / "samples_direct.txt", {"seed": cfg.seed, "candidate_size": cands.size})
    (out / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    return report


def cmd_plan(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> ContractionPlan:
    wl = prepare(cfg)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "plan.json").write_text(wl.plan.to_json(indent=1), encoding="utf-8")
    return wl.plan


def oracle_check(cfg: ExperimentConfig, rtol: float = 1e-8) -> float:
    """Max per-amplitude relative error of exact contraction against the oracle."""
    exact_cfg = ExperimentConfig(**{**asdict(cfg), "K": 0, "m": 1, "precision": "f64"})
    wl = prepare(exact_cfg)
    amps = run_parallel(wl.network, wl.plan, wl.config, cfg.workers).amplitudes
    ref = simulate_exact(wl.circuit).amplitudes
    err = float(np.max(np.abs(amps - ref) / np.abs(ref)))
    if not err <= rtol:
        raise NumericFault(f"contraction deviates from oracle by {err:.3e} (tolerance {rtol:g})")
    return err


# --------------------------------------------------------------------------- scaling


@dataclass(frozen=True)
class ScalingFit:
    a: float
    b: float
    r2: float

    def predict(self, workers: float) -> float:
        return self.a / workers + self.b


def fit_scaling(workers: Sequence[float], times: Sequence[float]) -> ScalingFit:
    """Least-squares fit of ``time = a / w + b``."""
    w = np.asarray(workers, dtype=float)
    t = np.asarray(times, dtype=float)
    if w.shape != t.shape or np.unique(w).size < 2:
        raise RegressionError("scaling fit needs at least two distinct worker counts")
    if np.any(w < 1):
        raise RegressionError("worker counts must be >= 1")
    x = 1.0 / w
    A = np.column_stack([x, np.ones_like(x)])
    (a, b), *_ = np.linalg.lstsq(A, t, rcond=None)
    resid = t - (a * x + b)
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return ScalingFit(float(a), float(b), r2)


@dataclass
class ScalingReport:
    workers: list[int]
    seconds: list[float]
    fit: ScalingFit
    extrapolate_to: int | None = None
    bit_identical: bool = True

    @property
    def extrapolated_seconds(self) -> float | None:
        return None if self.extrapolate_to is None else self.fit.predict(self.extrapolate_to)

    def to_dict(self) -> dict:
        return {
            "workers": self.workers,
            "seconds": self.seconds,
            "a": self.fit.a,
            "b": self.fit.b,
            "r2": self.fit.r2,
            "extrapolate_to": self.extrapolate_to,
            "extrapolated_seconds": self.extrapolated_seconds,
            "bit_identical": self.bit_identical,
        }


def cmd_scaling(
    cfg: ExperimentConfig,
    worker_counts: Sequence[int],
    extrapolate_to: int | None = None,
    repeats: int = 1,
    out_dir: str | Path | None = None,
) -> ScalingReport:
    """Time the same broken-edge workload at each worker count and fit a/w + b."""
    counts = [int(w) for w in worker_counts]
    if not counts or any(w < 1 for w in counts):
        raise ConfigError("worker counts must be a non-empty list of integers >= 1")
    if len(set(counts)) < 2:
        raise RegressionError("scaling fit needs at least two distinct worker counts")
    wl = prepare(cfg)
    seconds = []
    reference = None
    identical = True
    for w in counts:
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            res = run_parallel(wl.network, wl.plan, wl.config, w, cfg.dtype)
            best = min(best, time.perf_counter() - t0)
        if reference is None:
            reference = res.amplitudes
        elif not np.array_equal(reference, res.amplitudes):
            identical = False
        seconds.append(best)
    report = ScalingReport(counts, seconds, fit_scaling(counts, seconds), extrapolate_to, identical)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "scaling.csv", "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["series", "workers [count]", "wall [s]", "wall_predicted [s]", "wall_err [s]"])
            for wk, s in zip(counts, seconds):
                wr.writerow(["measured", wk, f"{s:.6f}", f"{report.fit.predict(wk):.6f}", ""])
        (out / "scaling.json").write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    return report


# --------------------------------------------------------------------------- energy


@dataclass(frozen=True)
class EnergyModel:
    """Declared-power energy model (not a meter reading)."""

    device_power_watts: float
    device_count: int
    wall_seconds: float

    @property
    def energy_kwh(self) -> float:
        return self.device_power_watts * self.device_count * self.wall_seconds / 3.6e6


#: (label, kWh) reference points for comparison tables.
REFERENCE_POINTS: tuple[tuple[str, float], ...] = (
    ("superconducting processor, 26 kW x 600 s", EnergyModel(26e3, 1, 600).energy_kwh),
    ("1024 x A100 at 400 W, 1477.18 s", EnergyModel(400, 1024, 1477.18).energy_kwh),
    ("1024 x A100 at 400 W, one hour", EnergyModel(400, 1024, 3600).energy_kwh),
    ("Sunway supercomputer, 35 MW x 304 s", EnergyModel(35e6, 1, 304).energy_kwh),
    ("512-GPU tensor-network run, 15 h (stated)", 2688.0),
)


@dataclass
class EnergyReport:
    model: EnergyModel
    energy_kwh: float
    label: str = "model"
    comparisons: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "device_power_watts": self.model.device_power_watts,
            "device_count": self.model.device_count,
            "wall_seconds": self.model.wall_seconds,
            "energy_kwh": self.energy_kwh,
            "comparisons": self.comparisons,
        }


def cmd_energy(model: EnergyModel) -> EnergyReport:
    if model.device_power_watts <= 0 or model.device_count <= 0 or model.wall_seconds < 0:
        raise ConfigError("power and device count must be positive, duration non-negative")
    kwh = model.energy_kwh
    rows = [
        {"reference": name, "reference_kwh": ref, "ratio_model_to_reference": kwh / ref}
        for name, ref in REFERENCE_POINTS
    ]
    return EnergyReport(model, kwh, "model", rows)
