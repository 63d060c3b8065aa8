"""Desk-scale datasets mirroring the validation figures, emitted as CSV."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .circuit import gen_random_circuit
from .errors import ConfigError
from .engine import contract, make_broken_config, state_fidelity
from .harness import ExperimentConfig, cmd_scaling
from .metrics import CandidateSet, build_candidate_set, direct_sample, top_k_select, xeb
from .network import circuit_to_network, find_contraction_path
from .statevector import simulate_exact

FIGURES = ("fidelity_vs_K", "amplification_vs_k", "scaling", "pt_histogram")


@dataclass(frozen=True)
class Row:
    series: str
    x: float
    y: float
    y_predicted: float
    y_err: float


@dataclass
class Dataset:
    figure: str
    x_name: str
    y_name: str
    rows: list[Row]

    def series(self, name: str) -> list[Row]:
        return [r for r in self.rows if r.series == name]

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["series", self.x_name, self.y_name, f"{self.y_name} predicted", f"{self.y_name} err"])
            for r in self.rows:
                w.writerow([r.series, repr(r.x), repr(r.y), repr(r.y_predicted), repr(r.y_err)])
        return path


def _sem(vals: Sequence[float]) -> float:
    v = np.asarray(vals, dtype=float)
    return float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0


def _broken_amplitudes(network, K: int, seed: int, effort: int = 1) -> np.ndarray:
    cfg = make_broken_config(network, K, 1, seed)
    plan = find_contraction_path(network, effort=effort, broken=cfg.broken_labels)
    return contract(network, plan, cfg)


def fidelity_vs_K(
    n: int = 12,
    layers: int = 14,
    topology: str = "line",
    Ks: Sequence[int] = tuple(range(1, 9)),
    seeds: Sequence[int] = tuple(range(10)),
    l: int = 4,
    M: int = 2**12,
) -> Dataset:
    """Predicted 2^-K, measured fidelity and direct-sampling XEB against K."""
    fid: dict[int, list[float]] = {K: [] for K in Ks}
    xebs: dict[int, list[float]] = {K: [] for K in Ks}
    for s in seeds:
        c = gen_random_circuit(n, layers, topology, s)
        exact = simulate_exact(c)
        q = exact.probabilities
        net = circuit_to_network(c)
        cands = build_candidate_set(n, range(l), M, seed=10_000 + s)
        for K in Ks:
            amps = _broken_amplitudes(net, K, s)
            fid[K].append(state_fidelity(amps, exact.amplitudes))
            xebs[K].append(xeb(direct_sample(cands.evaluate(amps), 20_000 + s), q))
    rows = []
    for K in Ks:
        pred = 2.0**-K
        rows.append(Row("predicted", K, pred, pred, 0.0))
        rows.append(Row("fidelity", K, float(np.mean(fid[K])), pred, _sem(fid[K])))
        rows.append(Row("xeb", K, float(np.mean(xebs[K])), pred, _sem(xebs[K])))
    return Dataset("fidelity_vs_K", "broken edges K [count]", "value [1]", rows)


def _topk_curve(cands: CandidateSet, q: np.ndarray, ks: Sequence[int]) -> list[float]:
    # top-k lists are prefixes of the top-kmax list
    top = top_k_select(cands, max(ks))
    n = cands.n
    return [xeb(top.bitstrings[:k], q, n) for k in ks]


def amplification_vs_k(
    n: int = 16,
    layers: int = 16,
    topology: str = "line",
    Ds: Sequence[int] = (1, 2, 3, 4, 5),
    seeds: Sequence[int] = (0, 1, 2),
    k_exponents: Sequence[int] = tuple(range(0, 16)),
) -> Dataset:
    """Top-k XEB against k on an exhaustive candidate set, per broken-edge count D.

    Predicted values are ``F_D * ln(2**n / k)`` with ``F_D`` the mean measured
    fidelity; the ``ideal`` series uses exact probabilities (``F = 1``).
    """
    N = 2**n
    ks = [2**e for e in k_exponents]
    curves: dict[str, list[list[float]]] = {"ideal": []}
    fids: dict[int, list[float]] = {D: [] for D in Ds}
    for D in Ds:
        curves[f"D={D}"] = []
    for s in seeds:
        c = gen_random_circuit(n, layers, topology, s)
        exact = simulate_exact(c)
        q = exact.probabilities
        base = build_candidate_set(n, range(n), 1, 0)
        curves["ideal"].append(_topk_curve(base.evaluate(exact.amplitudes), q, ks))
        net = circuit_to_network(c)
        for D in Ds:
            amps = _broken_amplitudes(net, D, s)
            fids[D].append(state_fidelity(amps, exact.amplitudes))
            curves[f"D={D}"].append(_topk_curve(base.evaluate(amps), q, ks))
    rows = []
    for D in Ds:
        rows.append(Row("fidelity", D, float(np.mean(fids[D])), 2.0**-D, _sem(fids[D])))
    for name, per_seed in curves.items():
        arr = np.array(per_seed)
        F = 1.0 if name == "ideal" else float(np.mean(fids[int(name[2:])]))
        for j, k in enumerate(ks):
            rows.append(Row(name, k, float(arr[:, j].mean()), F * math.log(N / k), _sem(arr[:, j])))
    return Dataset("amplification_vs_k", "k [count]", "xeb_topk [1]", rows)


def pt_histogram(n: int = 12, layers: int = 20, topology: str = "line", seed: int = 0, width: float = 0.25, xmax: float = 8.0) -> Dataset:
    """Density of ``2**n q`` in bins next to the exponential reference."""
    q = simulate_exact(gen_random_circuit(n, layers, topology, seed)).probabilities
    x = q * 2**n
    edges = np.arange(0.0, xmax + width / 2, width)
    counts, _ = np.histogram(x, bins=edges)
    rows = []
    for lo, hi, cnt in zip(edges[:-1], edges[1:], counts):
        dens = cnt / (x.size * width)
        pred = (math.exp(-lo) - math.exp(-hi)) / width
        rows.append(Row("density", 0.5 * (lo + hi), float(dens), pred, math.sqrt(cnt) / (x.size * width)))
    return Dataset("pt_histogram", "Nq bin centre [1]", "density [1]", rows)


def scaling(worker_counts: Sequence[int] = (1, 2, 4, 8), cfg: ExperimentConfig | None = None) -> Dataset:
    cfg = cfg or ExperimentConfig(n_qubits=12, n_layers=14, K=6, m=64, seed=0)
    rep = cmd_scaling(cfg, worker_counts)
    rows = [Row("measured", w, s, rep.fit.predict(w), 0.0) for w, s in zip(rep.workers, rep.seconds)]
    return Dataset("scaling", "workers [count]", "wall [s]", rows)


def cmd_reproduce(figure: str, out_dir: str | Path = "out", **params) -> tuple[Dataset, Path]:
    builders = {
        "fidelity_vs_K": fidelity_vs_K,
        "amplification_vs_k": amplification_vs_k,
        "scaling": scaling,
        "pt_histogram": pt_histogram,
    }
    if figure not in builders:
        raise ConfigError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    ds = builders[figure](**params)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return ds, ds.write_csv(out / f"{figure}.csv")
