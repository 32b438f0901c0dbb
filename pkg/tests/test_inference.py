"""Tests for sandwich covariance, confidence intervals and population stats."""

import numpy as np
import pytest

from svymhde.designs import DesignSpec, SurveySample, draw_sample, simulate_population
from svymhde.errors import DegenerateCurvatureError, InstabilityError, SvymhdeError
from svymhde.families import GAMMA, LOGNORMAL, WEIBULL
from svymhde.inference import (
    SandwichParts,
    confint,
    curvature_matrix,
    fisher_information,
    model_grid,
    phi_at,
    population_stats,
    sandwich,
    sigma_matrix,
)
from svymhde.mhde import fit

THETA = np.array([2.0, 35_000.0])


def _fit(n=2_000, seed=0, design=None):
    rng = np.random.default_rng(seed)
    if design is None:
        y = GAMMA.sample(THETA, n, rng)
        sample = SurveySample(y=y, weight=np.ones(n))
    else:
        pop = simulate_population(GAMMA, THETA, design.N, design.rho_yz, rng)
        sample = draw_sample(pop, design, rng)
    return sample, fit(sample, GAMMA)


# ---------------------------------------------------------------------------
# scaled score


def test_phi_equal_densities_is_quarter_score():
    y, _ = model_grid(GAMMA, THETA, subdivisions=50)
    f = GAMMA.density(THETA, y)
    phi = phi_at(GAMMA, THETA, f, y)
    assert np.allclose(phi, 0.25 * GAMMA.score(THETA, y), rtol=1e-12)


def test_phi_doubling_g_scales_by_inverse_sqrt2():
    y, _ = model_grid(GAMMA, THETA, subdivisions=50)
    f = GAMMA.density(THETA, y)
    phi1 = phi_at(GAMMA, THETA, f, y)
    phi2 = phi_at(GAMMA, THETA, 2.0 * f, y)
    assert np.allclose(phi2, phi1 / np.sqrt(2.0), rtol=1e-12)


def test_phi_floor_zeroes_underflowed_nodes():
    y, _ = model_grid(GAMMA, THETA, subdivisions=50)
    g = GAMMA.density(THETA, y)
    g[0] = 1e-30 * g.max()
    phi = phi_at(GAMMA, THETA, g, y)
    assert np.all(phi[0] == 0.0)


def test_sigma_at_model_is_information_over_16():
    # quadrature oracle: E[u u^T]/16
    y, w = model_grid(GAMMA, THETA)
    f = GAMMA.density(THETA, y)
    sigma = sigma_matrix(GAMMA, THETA, f, y, w)
    info = fisher_information(GAMMA, THETA)
    assert np.allclose(sigma, info / 16.0, rtol=1e-6)


# ---------------------------------------------------------------------------
# sandwich assembly


@pytest.mark.parametrize("fam,theta", [
    (GAMMA, [2.0, 35_000.0]),
    (WEIBULL, [1.6, 3.0]),
    (LOGNORMAL, [9.0, 2.0]),
], ids=["gamma", "weibull", "lognormal"])
def test_model_plugin_reproduces_inverse_information(fam, theta):
    theta = np.array(theta, dtype=float)
    rng = np.random.default_rng(12)
    y = fam.sample(theta, 3_000, rng)
    res = fit(SurveySample(y=y, weight=np.ones_like(y)), fam)
    parts = sandwich(res, None, fam, plug_in="model")
    cov = parts.covariance()
    target = np.linalg.inv(fisher_information(fam, res.theta_hat))
    err = np.linalg.norm(cov - target) / np.linalg.norm(target)
    assert err < 1e-3


def test_sandwich_requires_converged_fit():
    sample, res = _fit(400, seed=1)
    res.converged = False
    from svymhde.errors import ConvergenceError

    with pytest.raises(ConvergenceError):
        sandwich(res, sample, GAMMA)


def test_fpc_one_for_with_replacement():
    design = DesignSpec("srs_wr", 50_000, 0.02)
    sample, res = _fit(design=design, seed=2)
    parts = sandwich(res, sample, GAMMA)
    assert parts.fpc == 1.0
    assert parts.n_v_eff == design.n


def test_fpc_halves_covariance_at_alpha_half():
    design = DesignSpec("srs_wor", 2_000, 0.5)
    sample, res = _fit(design=design, seed=3)
    parts = sandwich(res, sample, GAMMA)
    assert parts.fpc == pytest.approx(0.5)
    uncorrected = SandwichParts(parts.curvature, parts.score_cov, parts.n_v_eff, 1.0)
    assert np.allclose(parts.scaled_covariance(), 0.5 * uncorrected.scaled_covariance())


def test_fpc_monotone_in_alpha():
    # same curvature/score matrices; variance non-increasing in alpha
    sample, res = _fit(500, seed=4)
    parts = sandwich(res, sample, GAMMA)
    variances = []
    n = 500
    for alpha in (0.1, 0.3, 0.5, 0.7):
        p = SandwichParts(parts.curvature, parts.score_cov, n / (1 - alpha), 1 - alpha)
        variances.append(np.diag(p.scaled_covariance()))
    for v1, v2 in zip(variances, variances[1:]):
        assert np.all(v2 <= v1 + 1e-15)


def test_curvature_step_halving_consistency():
    sample, res = _fit(1_500, seed=5)
    nodes = res.grid.nodes
    w = res.grid.kronrod_weights
    sq = np.sqrt(res.dens_values)

    def aff(th):
        return float((w * sq) @ np.exp(0.5 * GAMMA.log_density(GAMMA.validate(th), nodes)))

    a1 = curvature_matrix(aff, res.theta_hat, rel_step=1e-4)
    a2 = curvature_matrix(aff, res.theta_hat, rel_step=5e-5)
    assert np.linalg.norm(a1 - a2) / np.linalg.norm(a2) < 5e-3


def test_degenerate_curvature_raises_with_eigenvalues():
    flat = lambda theta: 1.0
    with pytest.raises(DegenerateCurvatureError) as err:
        curvature_matrix(flat, np.array([1.0, 1.0]))
    assert err.value.eigenvalues is not None


# ---------------------------------------------------------------------------
# confidence intervals


def test_confint_normal_quantile_multiplier():
    sample, res = _fit(1_000, seed=6)
    parts = sandwich(res, sample, GAMMA)
    ci = confint(res, parts, 0.95)
    se = np.sqrt(np.diag(parts.scaled_covariance()))
    half = ci.upper - res.theta_hat
    assert np.allclose(half / se, 1.959964, atol=1e-6)
    assert np.all(ci.lower < ci.upper)
    assert np.all(ci.relative_width > 0)


def test_confint_width_scales_with_covariance():
    sample, res = _fit(1_000, seed=6)
    parts = sandwich(res, sample, GAMMA)
    wider = SandwichParts(parts.curvature, 4.0 * parts.score_cov, parts.n_v_eff, parts.fpc)
    ci = confint(res, parts)
    ci4 = confint(res, wider)
    assert np.allclose(ci4.upper - ci4.lower, 2.0 * (ci.upper - ci.lower), rtol=1e-12)


def test_confint_level_validation():
    sample, res = _fit(400, seed=7)
    parts = sandwich(res, sample, GAMMA)
    with pytest.raises(SvymhdeError):
        confint(res, parts, 1.5)


# ---------------------------------------------------------------------------
# population statistics


def test_population_stats_closed_forms():
    assert GAMMA.mean(THETA) == pytest.approx(70_000.0)
    assert LOGNORMAL.median([9.0, 2.0]) == pytest.approx(np.exp(9.0))
    assert WEIBULL.median([1.0, 3.0]) == pytest.approx(3.0 * np.log(2.0))


def test_population_stats_zero_covariance_degenerate_ci():
    sample, res = _fit(500, seed=8)
    parts = SandwichParts(np.eye(2), np.zeros((2, 2)), 100.0, 1.0)
    stats = population_stats(res, parts, GAMMA, draws=200, rng=np.random.default_rng(0))
    assert stats.mean_ci == (stats.mean, stats.mean)
    assert stats.median_ci == (stats.median, stats.median)


def test_population_stats_interval_contains_point():
    sample, res = _fit(2_000, seed=9)
    parts = sandwich(res, sample, GAMMA)
    stats = population_stats(res, parts, GAMMA, draws=2_000, rng=np.random.default_rng(1))
    assert stats.mean_ci[0] < stats.mean < stats.mean_ci[1]
    assert stats.median_ci[0] < stats.median < stats.median_ci[1]
    # CI width should be near 2 * 1.96 * se(mean); loose sanity bound
    assert (stats.mean_ci[1] - stats.mean_ci[0]) / stats.mean < 0.5


def test_population_stats_rejection_instability():
    sample, res = _fit(300, seed=10)
    huge = SandwichParts(np.eye(2), np.eye(2) * 1e12, 1.0, 1.0)
    with pytest.raises(InstabilityError):
        population_stats(res, huge, GAMMA, draws=500, rng=np.random.default_rng(2))


def test_population_stats_draw_floor():
    sample, res = _fit(300, seed=11)
    parts = sandwich(res, sample, GAMMA)
    with pytest.raises(SvymhdeError):
        population_stats(res, parts, GAMMA, draws=10)
