"""Tests for the composite Gauss-Kronrod grid."""

import numpy as np
import pytest
from scipy import special

from svymhde.errors import SvymhdeError
from svymhde.quadrature import (
    NODES_PER_SUBDIVISION,
    build_grid,
    build_refined_grid,
    integrate,
    integrate_function,
)


def simpson(f, a, b, n=1_000_000):
    """Independent composite-Simpson oracle (n must be even)."""
    x = np.linspace(a, b, n + 1)
    y = f(x)
    h = (b - a) / n
    return h / 3 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum())


# ---------------------------------------------------------------------------
# rule constants


def test_embedded_gauss_rule_matches_independent_generation():
    # The 7 embedded Gauss-Legendre nodes/weights must agree with numpy's
    # own generation to near machine precision.
    grid = build_grid(-1.0, 1.0, 1)
    ref_nodes, ref_weights = np.polynomial.legendre.leggauss(7)
    mask = grid.gauss_weights > 0
    assert mask.sum() == 7
    assert np.allclose(np.sort(grid.nodes[mask]), np.sort(ref_nodes), atol=1e-14)
    order = np.argsort(grid.nodes[mask])
    assert np.allclose(grid.gauss_weights[mask][order], ref_weights[np.argsort(ref_nodes)],
                       atol=1e-14)


def test_kronrod_exact_through_degree_22():
    # K15 integrates polynomials up to degree 22 exactly on [-1, 1].
    grid = build_grid(-1.0, 1.0, 1)
    for deg in range(23):
        exact = 0.0 if deg % 2 else 2.0 / (deg + 1)
        got = integrate(grid.nodes**deg, grid).kronrod
        assert got == pytest.approx(exact, abs=5e-15), f"degree {deg}"


def test_node_symmetry_and_count():
    grid = build_grid(0.0, 1.0, 1)
    assert grid.n_nodes == NODES_PER_SUBDIVISION == 15
    assert np.allclose(grid.nodes + grid.nodes[::-1], 1.0, atol=1e-14)
    assert np.all((grid.nodes > 0.0) & (grid.nodes < 1.0))


def test_weights_sum_to_interval_length():
    for a, b, s in [(0.0, 1.0, 1), (0.0, 2.0, 2), (-3.0, 7.0, 13)]:
        grid = build_grid(a, b, s)
        assert np.sum(grid.kronrod_weights) == pytest.approx(b - a, abs=1e-13)
        assert np.sum(grid.gauss_weights) == pytest.approx(b - a, abs=1e-13)


def test_two_subdivisions_concatenate_single_panels():
    grid2 = build_grid(0.0, 2.0, 2)
    left = build_grid(0.0, 1.0, 1)
    right = build_grid(1.0, 2.0, 1)
    assert grid2.n_nodes == 30
    assert np.allclose(grid2.nodes, np.concatenate([left.nodes, right.nodes]))


# ---------------------------------------------------------------------------
# integration


def test_constant_exact():
    grid = build_grid(0.0, 1.0, 1)
    res = integrate(np.ones(grid.n_nodes), grid)
    assert res.kronrod == pytest.approx(1.0, abs=1e-15)
    assert res.gauss == pytest.approx(1.0, abs=1e-15)


def test_odd_monomial_vanishes():
    grid = build_grid(-1.0, 1.0, 1)
    res = integrate(grid.nodes**13, grid)
    assert abs(res.kronrod) < 1e-15


def test_normal_density_against_erf_oracle():
    # Oracle: integral of the standard normal over [-8, 8] equals erf(8/sqrt(2)).
    expected = float(special.erf(8.0 / np.sqrt(2.0)))
    grid = build_grid(-8.0, 8.0, 16)
    dens = np.exp(-0.5 * grid.nodes**2) / np.sqrt(2 * np.pi)
    assert integrate(dens, grid).kronrod == pytest.approx(expected, abs=1e-10)


def test_linearity():
    rng = np.random.default_rng(0)
    grid = build_grid(0.0, 3.0, 4)
    u = rng.normal(size=grid.n_nodes)
    v = rng.normal(size=grid.n_nodes)
    a, b = 1.7, -0.4
    lhs = integrate(a * u + b * v, grid).kronrod
    rhs = a * integrate(u, grid).kronrod + b * integrate(v, grid).kronrod
    assert lhs == pytest.approx(rhs, abs=1e-13)


_SMOOTH_SUITE = [
    (lambda x: np.exp(-x), 0.0, 5.0),
    (lambda x: 1.0 / (1.0 + x**2), 0.0, 4.0),
    (lambda x: np.exp(-0.5 * (x - 2.0) ** 2), 0.0, 6.0),
    (lambda x: np.sqrt(x + 0.1) * np.exp(-x), 0.0, 8.0),
]


@pytest.mark.parametrize("idx", range(len(_SMOOTH_SUITE)))
def test_refinement_never_hurts_and_err_est_bounds(idx):
    f, a, b = _SMOOTH_SUITE[idx]
    oracle = simpson(f, a, b)
    errors = []
    for subdivisions in (1, 2, 4, 8):
        res = integrate_function(f, build_grid(a, b, subdivisions))
        true_err = abs(res.kronrod - oracle)
        errors.append(true_err)
        # err_est with a safety factor of 10 bounds the true error
        assert true_err <= 10.0 * res.err_est + 1e-12
    assert all(e2 <= e1 + 1e-15 for e1, e2 in zip(errors, errors[1:]))


# ---------------------------------------------------------------------------
# refined grids and errors


def test_refined_grid_keeps_weight_sum_and_bounds():
    grid = build_refined_grid(0.0, 10.0, 5, refine=[(2.0, 2.5, 8), (7.0, 9.0, 4)])
    assert np.sum(grid.kronrod_weights) == pytest.approx(10.0, abs=1e-12)
    assert np.all((grid.nodes > 0.0) & (grid.nodes < 10.0))
    # refinement clipped outside [a, b] is ignored
    same = build_refined_grid(0.0, 1.0, 3, refine=[(5.0, 6.0, 4)])
    assert same.n_nodes == build_grid(0.0, 1.0, 3).n_nodes


def test_invalid_interval_and_shape_errors():
    with pytest.raises(SvymhdeError):
        build_grid(1.0, 1.0, 3)
    with pytest.raises(SvymhdeError):
        build_grid(0.0, 1.0, 0)
    grid = build_grid(0.0, 1.0, 2)
    with pytest.raises(SvymhdeError):
        integrate(np.ones(7), grid)
