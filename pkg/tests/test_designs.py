"""Tests for population simulation, sampling designs, weights and calibration."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

from svymhde.errors import CalibrationError, DesignError, EmptySampleError, SchemaError
from svymhde.designs import (
    DesignSpec,
    Population,
    SurveySample,
    calibrate,
    draw_sample,
    effective_sizes,
    kish_neff,
    pps_inclusion_probs,
    read_sample_csv,
    simulate_population,
    truncate_weights,
)
from svymhde.families import GAMMA

THETA = np.array([2.0, 35_000.0])


# ---------------------------------------------------------------------------
# population simulation


def test_independent_population_has_zero_rank_correlation():
    rng = np.random.default_rng(0)
    pop = simulate_population(GAMMA, THETA, 1_000_000, 0.0, rng)
    assert abs(spearmanr(pop.y, pop.z).statistic) < 0.01
    assert np.all(pop.z > 0)


def test_copula_hits_target_rank_correlation():
    rng = np.random.default_rng(1)
    pop = simulate_population(GAMMA, THETA, 1_000_000, 0.75, rng)
    assert spearmanr(pop.y, pop.z).statistic == pytest.approx(0.75, abs=0.02)


def test_population_determinism():
    a = simulate_population(GAMMA, THETA, 1_000, 0.5, np.random.default_rng(7))
    b = simulate_population(GAMMA, THETA, 1_000, 0.5, np.random.default_rng(7))
    assert a.y.tobytes() == b.y.tobytes()
    assert a.z.tobytes() == b.z.tobytes()


def test_cluster_assignment():
    pop = simulate_population(GAMMA, THETA, 5_000, 0.0, np.random.default_rng(3), clusters=True)
    assert set(np.unique(pop.cluster_id)) == {1, 2, 3, 4, 5}


# ---------------------------------------------------------------------------
# sample drawing


def test_srs_wor_exact_size_distinct_units_constant_weight():
    pop = simulate_population(GAMMA, THETA, 1_000, 0.0, np.random.default_rng(5))
    design = DesignSpec("srs_wor", 1_000, 0.1)
    s = draw_sample(pop, design, np.random.default_rng(6))
    assert s.n == 100
    assert np.all(s.weight == 10.0)
    assert len(np.unique(s.y)) == 100  # continuous values: repeats would mean reuse


def test_srs_wr_constant_weight_vector():
    pop = simulate_population(GAMMA, THETA, 500, 0.0, np.random.default_rng(5))
    s = draw_sample(pop, DesignSpec("srs_wr", 500, 0.2), np.random.default_rng(8))
    assert s.n == 100
    assert np.unique(s.weight).size == 1


def test_poisson_pps_mean_realized_size():
    rng = np.random.default_rng(9)
    pop = simulate_population(GAMMA, THETA, 10_000, 0.5, rng)
    design = DesignSpec("poisson_pps", 10_000, 0.01, rho_yz=0.5)
    sizes = [draw_sample(pop, design, rng).n for _ in range(1_000)]
    n = design.n
    assert abs(np.mean(sizes) - n) < 3 * np.sqrt(n)


def test_poisson_pps_constant_z_reduces_to_equal_probability():
    pop = Population(y=np.abs(np.random.default_rng(0).normal(5, 1, 1_000)) + 1,
                     z=np.full(1_000, 3.5))
    design = DesignSpec("poisson_pps", 1_000, 0.05)
    s = draw_sample(pop, design, np.random.default_rng(1))
    assert np.allclose(s.pi, 0.05)


def test_poisson_pps_pi_capped_at_one():
    z = np.ones(100)
    z[0] = 1_000.0
    pi, capped = pps_inclusion_probs(z, 50)
    assert capped == 1
    assert pi[0] == 1.0
    assert np.all(pi <= 1.0)


def test_poisson_empty_sample_raises():
    pop = Population(y=np.ones(100) + np.arange(100), z=np.ones(100))
    design = DesignSpec("poisson_pps", 100, 0.02)  # n = 2, pi = 0.02 each
    failures = 0
    for seed in range(2_000):
        try:
            draw_sample(pop, design, np.random.default_rng(seed))
        except EmptySampleError:
            failures += 1
    # P(empty) = 0.98^100 ~ 0.13
    assert 0.05 < failures / 2_000 < 0.25


def test_ht_normalizer_concentration():
    # mean over replicates of sum(delta/pi)/N concentrates at 1
    rng = np.random.default_rng(11)
    pop = simulate_population(GAMMA, THETA, 20_000, 0.5, rng)
    design = DesignSpec("poisson_pps", 20_000, 0.02, rho_yz=0.5)
    R = 500
    s_values = []
    for _ in range(R):
        s = draw_sample(pop, design, rng)
        s_values.append(np.sum(s.weight) / 20_000)
    n_v_eff = s.design_meta.n_v_eff
    assert abs(np.mean(s_values) - 1.0) < 4.0 / np.sqrt(R * n_v_eff)


def test_design_spec_validation():
    with pytest.raises(DesignError):
        DesignSpec("srs_wor", 100, 0.005)  # n = 0 (rounds below 2)
    with pytest.raises(DesignError):
        DesignSpec("bogus", 100, 0.1)
    with pytest.raises(DesignError):
        DesignSpec("poisson_pps", 1_000, 0.1, rho_yz=1.0)


# ---------------------------------------------------------------------------
# effective sizes


def test_effective_sizes_equal_probability():
    sizes = effective_sizes(np.full(1_000, 0.1), 1_000, "poisson_pps")
    assert sizes.n_eff == pytest.approx(100.0, rel=1e-12)


def test_effective_sizes_srs_wor_closed_form():
    # n_v_eff = n / (1 - alpha) for without-replacement equal probabilities
    sizes = effective_sizes(np.full(1_000, 0.1), 1_000, "srs_wor")
    assert sizes.n_v_eff == pytest.approx(100.0 / 0.9, rel=1e-12)
    assert effective_sizes(np.full(10, 0.25), 10, "srs_wr").n_v_eff == pytest.approx(2.0)


def test_effective_sizes_direct_arithmetic():
    sizes = effective_sizes(np.array([0.5, 0.25]), 2, "poisson_pps")
    assert sizes.n_eff == pytest.approx(4.0 / 6.0, rel=1e-12)
    assert sizes.n_v_eff == pytest.approx(1.0, rel=1e-12)


def test_effective_sizes_census_flag():
    sizes = effective_sizes(np.ones(5), 5, "poisson_pps")
    assert sizes.census and np.isinf(sizes.n_v_eff)


def test_effective_sizes_sample_level_ht_estimate():
    # sample-level pi: totals replaced by HT estimates
    pi = np.array([0.5, 0.2])
    sizes = effective_sizes(pi, 10, "poisson_pps")
    inv_total = np.sum(1 / pi**2)
    assert sizes.n_eff == pytest.approx(100.0 / inv_total, rel=1e-12)


def test_n_eff_at_most_n_at_most_N():
    rng = np.random.default_rng(13)
    for _ in range(20):
        N = 500
        pi = rng.uniform(0.01, 1.0, N)
        sizes = effective_sizes(pi, N, "poisson_pps")
        n = np.sum(pi)
        assert sizes.n_eff <= n + 1e-9
        assert n <= N
        if np.all(pi <= 0.5):
            assert sizes.n_v_eff >= sizes.n_eff


def test_effective_sizes_rejects_bad_pi():
    with pytest.raises(DesignError):
        effective_sizes(np.array([0.0, 0.5]), 2, "poisson_pps")


# ---------------------------------------------------------------------------
# Kish effective size


def test_kish_examples():
    assert kish_neff([5.0, 5.0, 5.0, 5.0]) == pytest.approx(4.0)
    assert kish_neff([1.0, 1.0, 2.0]) == pytest.approx(16.0 / 6.0, rel=1e-12)
    assert kish_neff([10.0, 10.0, 20.0]) == pytest.approx(16.0 / 6.0, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=0.01, max_value=100.0), min_size=1, max_size=30))
def test_kish_bounded_by_count(weights):
    value = kish_neff(weights)
    assert value <= len(weights) + 1e-9
    if len(set(weights)) == 1:
        assert value == pytest.approx(len(weights))


# ---------------------------------------------------------------------------
# calibration and truncation


def _toy_sample(n=10, seed=0):
    rng = np.random.default_rng(seed)
    return SurveySample(y=rng.uniform(1, 2, n), weight=rng.uniform(1, 3, n))


def test_calibration_poststratification_counts():
    s = _toy_sample(9)
    cluster = np.repeat([1, 2, 3], 3)
    x = np.ones(9)
    totals = {1: 30.0, 2: 12.0, 3: 9.0}
    out = calibrate(s, totals, x, cluster)
    for c, target in totals.items():
        assert np.sum(out.weight[cluster == c]) == pytest.approx(target, rel=1e-12)
    assert out.base_weight is s.weight


def test_calibration_single_cluster_ratio():
    s = SurveySample(y=np.ones(4), weight=np.array([1.0, 2.0, 3.0, 5.0]))
    x = np.array([10.0, 10.0, 10.0, 10.0])
    est = np.sum(s.weight * x)  # 110
    out = calibrate(s, {1: 100.0}, x, np.ones(4, dtype=int))
    assert np.allclose(out.weight, s.weight * (100.0 / est))


def test_calibration_idempotent():
    s = _toy_sample(6)
    cluster = np.repeat([1, 2], 3)
    x = np.arange(1.0, 7.0)
    totals = {1: 20.0, 2: 40.0}
    once = calibrate(s, totals, x, cluster)
    twice = calibrate(once, totals, x, cluster)
    assert np.allclose(once.weight, twice.weight, rtol=1e-14)


def test_calibration_empty_cluster_error():
    s = _toy_sample(4)
    with pytest.raises(CalibrationError) as err:
        calibrate(s, {1: 10.0, 2: 5.0}, np.ones(4), np.ones(4, dtype=int))
    assert 2 in err.value.clusters


def test_truncate_weights():
    s = SurveySample(y=np.ones(3), weight=np.array([1.0, 5.0, 50.0]))
    out = truncate_weights(s, 10.0)
    assert np.allclose(out.weight, [1.0, 5.0, 10.0])
    assert out.truncated == 1
    same = truncate_weights(s, np.inf)
    assert same is s


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=0.5, max_value=100.0))
def test_truncation_monotone(cap):
    s = SurveySample(y=np.ones(4), weight=np.array([0.3, 2.0, 7.0, 60.0]))
    out = truncate_weights(s, cap)
    assert out.weight.max() <= max(cap, s.weight.min())


# ---------------------------------------------------------------------------
# CSV ingestion


def test_read_sample_csv_roundtrip(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("y,weight,cluster,x\n1.5,2.0,a,3.0\n2.5,1.0,b,4.0\n", encoding="utf-8")
    sample, aux = read_sample_csv(path)
    assert np.allclose(sample.y, [1.5, 2.5])
    assert np.allclose(sample.weight, [2.0, 1.0])
    assert list(aux["cluster"]) == ["a", "b"]
    assert np.allclose(aux["x"], [3.0, 4.0])


def test_read_sample_csv_pi_column(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("y,pi\n1.0,0.5\n2.0,0.25\n", encoding="utf-8")
    sample, _ = read_sample_csv(path)
    assert np.allclose(sample.weight, [2.0, 4.0])
    assert np.allclose(sample.pi, [0.5, 0.25])


def test_read_sample_csv_schema_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("value\n1.0\n", encoding="utf-8")
    with pytest.raises(SchemaError):
        read_sample_csv(bad)
    both = tmp_path / "both.csv"
    both.write_text("y,weight,pi\n1.0,1.0,0.5\n", encoding="utf-8")
    with pytest.raises(SchemaError):
        read_sample_csv(both)
    unparsable = tmp_path / "nan.csv"
    unparsable.write_text("y,weight\n1.0,1.0\nxyz,1.0\n", encoding="utf-8")
    with pytest.raises(SchemaError, match=":3:"):
        read_sample_csv(unparsable)
