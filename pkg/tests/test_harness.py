from __future__ import annotations

import json
import math

import numpy as np
import pytest

from rcsampler.circuit import gen_random_circuit
from rcsampler.cli import main
from rcsampler.errors import CapacityError, ConfigError, RegressionError
from rcsampler.harness import (
    EnergyModel,
    ExperimentConfig,
    cmd_energy,
    cmd_plan,
    cmd_run,
    cmd_scaling,
    fit_scaling,
    oracle_check,
)
from rcsampler.metrics import METRICS_SCHEMA, build_candidate_set, read_samples, xeb
from rcsampler.reproduce import cmd_reproduce
from rcsampler.statevector import simulate_exact

SMALL = dict(n_qubits=8, n_layers=8, K=2, m=1, open_qubits=[0, 1, 2], M=16, k=8)


# ---------------------------------------------------------------- scaling fit


def test_fit_recovers_exact_law():
    w = [1, 2, 4, 8, 16]
    t = [120.0 / x + 3.0 for x in w]
    fit = fit_scaling(w, t)
    assert fit.a == pytest.approx(120.0, rel=1e-9)
    assert fit.b == pytest.approx(3.0, rel=1e-9)
    assert fit.r2 == pytest.approx(1.0)


def test_fit_extrapolation_published_point():
    # a/w + b passing through 1477.18 s at 1024 workers with a 2.069 s floor
    b = 2.069
    a = (1477.18 - b) * 1024
    w = [256, 512, 1024]
    fit = fit_scaling(w, [a / x + b for x in w])
    assert fit.predict(10_000) == pytest.approx(153.12, abs=0.01)
    # without the constant term the same point extrapolates lower
    assert 1477.18 * 1024 / 10_000 == pytest.approx(151.26, abs=0.01)


def test_fit_needs_two_counts():
    with pytest.raises(RegressionError):
        fit_scaling([4, 4], [1.0, 1.1])
    with pytest.raises(RegressionError):
        fit_scaling([4], [1.0])


def test_cmd_scaling_small(tmp_path):
    cfg = ExperimentConfig(n_qubits=8, n_layers=8, K=3, m=8)
    rep = cmd_scaling(cfg, [1, 2], extrapolate_to=4, out_dir=tmp_path)
    assert rep.bit_identical
    assert rep.extrapolated_seconds is not None
    assert (tmp_path / "scaling.csv").exists()
    with pytest.raises(RegressionError):
        cmd_scaling(cfg, [2, 2])


# ---------------------------------------------------------------- energy


def test_energy_examples():
    assert EnergyModel(400, 1024, 3600).energy_kwh == pytest.approx(409.6)
    assert EnergyModel(26e3, 1, 600).energy_kwh == pytest.approx(4.333, abs=1e-3)
    assert EnergyModel(35e6, 1, 304).energy_kwh == pytest.approx(2955.6, abs=0.1)
    assert EnergyModel(400, 1024, 0).energy_kwh == 0.0
    rep = cmd_energy(EnergyModel(400, 1024, 1477.18))
    assert rep.label == "model"
    assert rep.energy_kwh == pytest.approx(168.07, abs=0.01)
    with pytest.raises(ConfigError):
        cmd_energy(EnergyModel(-1, 1, 1))


# ---------------------------------------------------------------- config


def test_config_sections_and_errors(tmp_path):
    cfg = ExperimentConfig.from_dict(
        {"seed": 3, "circuit": {"n_qubits": 10}, "candidates": {"open_qubits": [0, 1], "M": 4}, "postprocess": {"k": 2}}
    )
    assert (cfg.seed, cfg.n_qubits, cfg.M, cfg.k) == (3, 10, 4, 2)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"circuit": {"qubits": 3}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"colour": 1})
    bad = ExperimentConfig(open_qubits=[0, 1], M=2, k=9)
    with pytest.raises(ConfigError, match="k must satisfy"):
        bad.validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(K=2, m=5).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")


def test_seeds_independent():
    s = ExperimentConfig(seed=1).seeds()
    assert s["circuit"] == 1
    assert len({s["broken"], s["candidates"], s["sampling"]}) == 3


# ---------------------------------------------------------------- run


def test_run_outputs_and_schema(tmp_path):
    jsonschema = pytest.importorskip("jsonschema")
    rep = cmd_run(ExperimentConfig(**SMALL), tmp_path)
    for name in ("circuit.json", "plan.json", "timings.csv", "samples.txt", "samples_direct.txt", "metrics.json"):
        assert (tmp_path / name).exists()
    d = json.loads((tmp_path / "metrics.json").read_text())
    jsonschema.validate(d, METRICS_SCHEMA)
    assert d["predicted_xeb"] == pytest.approx(rep.recomputed_prediction())
    top = read_samples(tmp_path / "samples.txt")
    assert len(top) == 8
    q = simulate_exact(gen_random_circuit(8, 8, "line", 0)).probabilities
    assert xeb(top, q) == pytest.approx(rep.xeb)


def test_run_is_deterministic(tmp_path):
    cmd_run(ExperimentConfig(**SMALL), tmp_path / "a")
    cmd_run(ExperimentConfig(**SMALL), tmp_path / "b")
    for name in ("samples.txt", "samples_direct.txt", "metrics.json", "plan.json", "circuit.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_run_exact_direct_xeb_matches_expectation(tmp_path):
    # K = 0: direct sampling draws within each group from the ideal distribution
    cfg = ExperimentConfig(n_qubits=12, n_layers=14, K=0, open_qubits=[0, 1, 2, 3], M=4096, seed=2)
    rep = cmd_run(cfg, tmp_path)
    assert rep.fidelity == pytest.approx(1.0, abs=1e-12)
    q = simulate_exact(gen_random_circuit(12, 14, "line", 2)).probabilities
    cs = build_candidate_set(12, cfg.open_list, cfg.M, cfg.seeds()["candidates"])
    g = q[cs.strings]
    per_group = (g**2).sum(axis=1) / g.sum(axis=1)  # E[q(s)] for one draw
    expect = 2**12 * per_group.mean() - 1
    var = (2**12) ** 2 * ((g**3).sum(axis=1) / g.sum(axis=1) - per_group**2).sum() / cfg.M**2
    assert abs(rep.direct_xeb - expect) <= 4 * math.sqrt(var)


def test_run_ratio_tracks_log_amplification(tmp_path):
    # n=12, K=2, l=4, M=2^12, k=2^8: xeb/F should sit near ln(|S|/k) on average
    ratios = []
    for s in range(10):
        cfg = ExperimentConfig(n_qubits=12, n_layers=14, K=2, m=1, open_qubits=[0, 1, 2, 3], M=2**12, k=2**8, seed=s)
        ratios.append(cmd_run(cfg, tmp_path / str(s)).ratio)
    assert np.mean(ratios) == pytest.approx(math.log(2**16 / 2**8), rel=0.25)


def test_run_rejects_f32_and_large_n(tmp_path):
    with pytest.raises(ConfigError):
        cmd_run(ExperimentConfig(**SMALL, precision="f32"), tmp_path)
    with pytest.raises(CapacityError):
        cmd_run(ExperimentConfig(n_qubits=25, n_layers=2), tmp_path)


def test_plan_and_oracle_check(tmp_path):
    plan = cmd_plan(ExperimentConfig(n_qubits=10, n_layers=10, memory_budget=2**16), tmp_path)
    assert plan.peak_bytes <= 2**16
    assert (tmp_path / "plan.json").exists()
    assert oracle_check(ExperimentConfig(n_qubits=10, n_layers=10, K=3)) < 1e-8


# ---------------------------------------------------------------- CLI


def test_cli_exit_codes(tmp_path, capsys):
    cfgfile = tmp_path / "bad.json"
    cfgfile.write_text(json.dumps({"candidates": {"open_qubits": [0, 1], "M": 2}, "postprocess": {"k": 100}}))
    assert main(["run", "--config", str(cfgfile), "--out", str(tmp_path / "o")]) == 2
    assert "k must satisfy" in capsys.readouterr().err
    big = tmp_path / "big.json"
    big.write_text(json.dumps({"circuit": {"n_qubits": 30, "n_layers": 2}}))
    assert main(["run", "--config", str(big), "--out", str(tmp_path / "o")]) == 4


def test_cli_run_and_energy(tmp_path, capsys):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"circuit": {"n_qubits": 8, "n_layers": 8}, "approximation": {"K": 1}}))
    assert main(["run", "--config", str(good), "--seed", "4", "--out", str(tmp_path / "r")]) == 0
    d = json.loads((tmp_path / "r" / "metrics.json").read_text())
    assert d["inputs"]["seeds"]["circuit"] == 4
    assert main(["energy", "--power", "400", "--count", "1024", "--seconds", "3600", "--out", str(tmp_path / "e")]) == 0
    assert json.loads((tmp_path / "e" / "energy.json").read_text())["energy_kwh"] == pytest.approx(409.6)
    assert main(["oracle-check", "--config", str(good)]) == 0
    assert main(["plan", "--config", str(good), "--out", str(tmp_path / "p")]) == 0


def test_reproduce_pt_histogram(tmp_path):
    ds, path = cmd_reproduce("pt_histogram", tmp_path, n=10, layers=12)
    header = path.read_text().splitlines()[0]
    assert header.startswith("series,")
    assert "predicted" in header and "err" in header
    dens = np.array([r.y for r in ds.rows])
    pred = np.array([r.y_predicted for r in ds.rows])
    assert np.max(np.abs(dens - pred)) < 0.15
    with pytest.raises(ConfigError):
        cmd_reproduce("nope", tmp_path)
