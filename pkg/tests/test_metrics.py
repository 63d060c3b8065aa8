from __future__ import annotations

import json
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from rcsampler.circuit import gen_random_circuit
from rcsampler.engine import simulate_approximate
from rcsampler.errors import ConfigError, InputError
from rcsampler.metrics import (
    METRICS_SCHEMA,
    CandidateSet,
    MetricsReport,
    Provenance,
    SampleSet,
    amplitude_correlation,
    build_candidate_set,
    cost_reduction,
    direct_sample,
    ideal_topk_law,
    pearson_r,
    porter_thomas_check,
    predicted_topk_xeb,
    read_samples,
    top_k_select,
    write_samples,
    xeb,
)
from rcsampler.statevector import simulate_exact


def _bits(i, n):
    return [(i >> (n - 1 - q)) & 1 for q in range(n)]


# ---------------------------------------------------------------- candidate sets


def test_candidate_structure():
    cs = build_candidate_set(4, [0, 1], 3, seed=9)
    assert cs.strings.shape == (3, 4)
    assert cs.size == 12
    for g in range(3):
        bits = [_bits(int(s), 4) for s in cs.strings[g]]
        assert len({tuple(b[:2]) for b in bits}) == 4  # all open assignments
        assert len({tuple(b[2:]) for b in bits}) == 1  # shared fixed bits


def test_open_enumeration_order():
    cs = build_candidate_set(5, [3, 1], 1, seed=0)
    # first listed open qubit is the slow index
    got = [tuple(_bits(int(s), 5)[q] for q in (3, 1)) for s in cs.strings[0]]
    assert got == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_exhaustive_set_ignores_seed():
    a = build_candidate_set(12, range(12), 1, seed=1)
    b = build_candidate_set(12, range(12), 1, seed=2)
    assert np.array_equal(a.strings, b.strings)
    assert np.array_equal(np.sort(a.strings.ravel()), np.arange(2**12))


def test_candidate_errors(caplog):
    with pytest.raises(ConfigError):
        build_candidate_set(4, range(4), 2, 0)
    with pytest.raises(ConfigError):
        build_candidate_set(4, [0, 0], 1, 0)
    with pytest.raises(ConfigError):
        build_candidate_set(4, [5], 1, 0)
    with pytest.raises(ConfigError):
        build_candidate_set(4, [0], 0, 0)
    with caplog.at_level(logging.INFO, logger="rcsampler.metrics"):
        build_candidate_set(4, [0, 1], 50, 0)  # only 4 distinct fixed substrings exist
    assert "repeat" in caplog.text


def test_evaluate_shape_check():
    cs = build_candidate_set(4, [0], 2, 0)
    with pytest.raises(InputError):
        cs.evaluate(np.ones(8))
    with pytest.raises(InputError):
        cs.with_probabilities(-np.ones(cs.strings.shape))


# ---------------------------------------------------------------- XEB


@pytest.fixture(scope="module")
def q12():
    return simulate_exact(gen_random_circuit(12, 14, "line", 11)).probabilities


def test_xeb_uniform_samples_near_zero(q12):
    rng = np.random.default_rng(0)
    s = rng.integers(0, 2**12, size=100_000)
    assert abs(xeb(s, q12, 12)) <= 0.05


def test_xeb_ideal_samples_near_one(q12):
    rng = np.random.default_rng(1)
    s = rng.choice(2**12, size=100_000, p=q12)
    assert abs(xeb(s, q12, 12) - 1.0) <= 0.05


def test_xeb_single_sample_at_uniform_value():
    q = np.full(8, 1 / 8)
    assert xeb(np.array([3]), q, 3) == 0.0


def test_xeb_lookup_forms(q12):
    s = np.array([5, 17, 2000])
    ref = xeb(s, q12, 12)
    assert xeb(s, {int(i): float(q12[i]) for i in s}, 12) == pytest.approx(ref)
    assert xeb(s, lambda i: float(q12[i]), 12) == pytest.approx(ref)
    with pytest.raises(InputError):
        xeb(s, {5: 0.1}, 12)
    with pytest.raises(InputError):
        xeb(s, q12)
    with pytest.raises(InputError):
        xeb(np.array([], dtype=np.int64), q12, 12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 8))
def test_full_weighted_xeb_nonnegative(seed, n):
    q = np.random.default_rng(seed).exponential(size=2**n)
    q /= q.sum()
    # expectation over ideal samples: N sum q^2 - 1 >= 0 by Cauchy-Schwarz
    expect = 2**n * float(q @ q) - 1
    assert expect >= -1e-12


# ---------------------------------------------------------------- top-k


def _brute_topk(cs: CandidateSet, k: int) -> list[int]:
    pairs = sorted(zip(-cs.probs.ravel(), cs.strings.ravel()))
    return [int(s) for _, s in pairs[:k]]


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 10**6),
    M=st.integers(1, 6),
    l=st.integers(1, 3),
    data=st.data(),
)
def test_topk_matches_sort_and_is_order_free(seed, M, l, data):
    n = 6
    rng = np.random.default_rng(seed)
    cs = build_candidate_set(n, range(l), M, seed)
    # coarse values force ties
    probs = rng.integers(0, 4, size=cs.strings.shape).astype(float)
    cs = cs.with_probabilities(probs)
    k = data.draw(st.integers(1, cs.size))
    got = top_k_select(cs, k)
    assert got.provenance is Provenance.TOP_K
    assert got.bitstrings.tolist() == _brute_topk(cs, k)
    perm = rng.permutation(M)
    shuffled = CandidateSet(n, cs.open_qubits, cs.fixed[perm], cs.strings[perm], cs.probs[perm])
    assert top_k_select(shuffled, k).bitstrings.tolist() == got.bitstrings.tolist()


def test_topk_full_set_and_bounds():
    cs = build_candidate_set(4, range(4), 1, 0).with_probabilities(np.full((1, 16), 1 / 16))
    assert sorted(top_k_select(cs, 16).bitstrings.tolist()) == list(range(16))
    assert top_k_select(cs, 3).bitstrings.tolist() == [0, 1, 2]
    with pytest.raises(InputError):
        top_k_select(cs, 17)
    with pytest.raises(InputError):
        top_k_select(build_candidate_set(4, [0], 1, 0), 1)


def test_topk_exact_n16_near_ln():
    c = gen_random_circuit(16, 16, "line", 0)
    st_ = simulate_exact(c)
    cs = build_candidate_set(16, range(16), 1, 0).evaluate(st_.amplitudes)
    k = 2**6
    val = xeb(top_k_select(cs, k), st_.probabilities)
    assert abs(val - math.log(2**16 / k)) <= 0.7


# ---------------------------------------------------------------- direct sampling


def test_direct_sample_point_mass():
    cs = build_candidate_set(2, [0, 1], 1, 0).with_probabilities(np.array([[1.0, 0, 0, 0]]))
    s = direct_sample(cs, 0)
    assert s.bitstrings.tolist() == [0]
    assert s.provenance is Provenance.DIRECT


def test_direct_sample_chi_square():
    M = 40_000
    cs = build_candidate_set(6, [0, 1, 2], M, seed=3)
    w = np.array([1, 2, 3, 4, 5, 6, 7, 8], dtype=float)
    cs = cs.with_probabilities(np.tile(w, (M, 1)))
    s = direct_sample(cs, 7)
    pos = np.array([np.flatnonzero(cs.strings[i] == s.bitstrings[i])[0] for i in range(M)])
    counts = np.bincount(pos, minlength=8)
    res = stats.chisquare(counts, M * w / w.sum())
    assert res.pvalue > 1e-3


def test_direct_sample_zero_group():
    cs = build_candidate_set(3, [0], 2, 0).with_probabilities(np.array([[0.0, 0.0], [0.5, 0.5]]))
    with pytest.raises(InputError):
        direct_sample(cs, 0)


# ---------------------------------------------------------------- laws and predictions


def test_predicted_topk_and_cost_reduction():
    assert predicted_topk_xeb(1.0, 2**16, 1) == pytest.approx(16 * math.log(2))
    assert predicted_topk_xeb(0.5, 100, 100) == 0.0
    assert round(cost_reduction(2**10, 1), 4) == 0.8557
    with pytest.raises(InputError):
        predicted_topk_xeb(1.2, 10, 1)
    with pytest.raises(InputError):
        predicted_topk_xeb(0.5, 10, 11)


def test_ideal_topk_law_values():
    assert ideal_topk_law(1.0).xeb == 0.0
    assert ideal_topk_law(2**-15).xeb == pytest.approx(10.3972, abs=1e-4)
    for alpha in (0.5, 1e-2, 1e-5):
        law = ideal_topk_law(alpha)
        tail, _ = integrate.quad(lambda x: x * math.exp(-x), law.threshold, np.inf)
        assert law.tail_expectation == pytest.approx(tail, rel=1e-9)
        assert math.exp(-law.threshold) == pytest.approx(alpha)
    with pytest.raises(InputError):
        ideal_topk_law(0.0)


def test_ideal_topk_law_monte_carlo():
    rng = np.random.default_rng(2024)
    x = rng.exponential(size=10_000_000)
    k = 10_000
    top = np.partition(x, x.size - k)[-k:]
    assert top.mean() - 1 == pytest.approx(ideal_topk_law(1e-3).xeb, abs=0.05)


# ---------------------------------------------------------------- correlation


def test_pearson_against_numpy():
    rng = np.random.default_rng(4)
    p, q = rng.normal(size=500), rng.normal(size=500)
    assert pearson_r(p, q) == pytest.approx(np.corrcoef(p, q)[0, 1], abs=1e-12)
    assert pearson_r(q, q) == pytest.approx(1.0)
    assert pearson_r(-q + 3, q) == pytest.approx(-1.0)
    with pytest.raises(InputError):
        pearson_r(np.ones(5), q[:5])
    with pytest.raises(InputError):
        pearson_r([1.0], [2.0])


def test_correlation_drops_with_more_broken_edges():
    r1, r8 = [], []
    for s in range(10):
        c = gen_random_circuit(12, 14, "line", s)
        ex = simulate_exact(c).amplitudes
        r1.append(amplitude_correlation(simulate_approximate(c, 1, 1, s).amplitudes, ex))
        r8.append(amplitude_correlation(simulate_approximate(c, 8, 1, s).amplitudes, ex))
    assert np.mean(r1) > 0 and np.mean(r8) > 0
    assert np.mean(r8) < np.mean(r1)
    with pytest.raises(InputError):
        amplitude_correlation(ex, ex, part="abs")


# ---------------------------------------------------------------- Porter-Thomas


def test_pt_synthetic_matches_scipy():
    x = np.random.default_rng(5).exponential(size=5000)
    fit = porter_thomas_check(x / 2**12, 12)
    ref = stats.kstest(x, "expon", method="asymp")
    assert fit.ks_statistic == pytest.approx(ref.statistic, abs=1e-12)
    assert fit.p_value == pytest.approx(ref.pvalue, abs=0.02)
    assert fit.p_value > 0.01


def test_pt_deep_passes_shallow_fails():
    deep = simulate_exact(gen_random_circuit(12, 20, "line", 0)).probabilities
    assert porter_thomas_check(deep, 12).p_value > 0.01
    shallow = simulate_exact(gen_random_circuit(12, 1, "line", 0)).probabilities
    assert porter_thomas_check(shallow, 12).p_value < 0.01
    with pytest.raises(InputError):
        porter_thomas_check(deep[:10], 12)


# ---------------------------------------------------------------- files


def test_samples_roundtrip(tmp_path):
    s = SampleSet(5, np.array([0, 31, 6]), Provenance.TOP_K, 3)
    write_samples(s, tmp_path / "s.txt", {"seed": 4})
    text = (tmp_path / "s.txt").read_text()
    assert "00110" in text and "# seed: 4" in text
    back = read_samples(tmp_path / "s.txt")
    assert back.bitstrings.tolist() == [0, 31, 6]
    assert back.provenance is Provenance.TOP_K and back.k == 3


def test_metrics_report_schema():
    jsonschema = pytest.importorskip("jsonschema")
    rep = MetricsReport(
        xeb=2.0, fidelity=0.25, predicted_xeb=1.9, pearson_r=0.5, pt_ks_statistic=0.01,
        candidate_size=64, k=4, inputs={"n": 6, "l": 2, "M": 16, "K": 2, "m": 1, "k": 4, "seeds": {}},
    )
    d = json.loads(rep.to_json())
    jsonschema.validate(d, METRICS_SCHEMA)
    assert d["ratio"] == 8.0
    assert rep.recomputed_prediction() == pytest.approx(0.25 * math.log(16))
