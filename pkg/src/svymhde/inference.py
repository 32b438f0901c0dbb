"""Asymptotic inference for the minimum Hellinger distance estimate.

The limiting covariance has sandwich form: the curvature of the affinity at
the maximizer (bread) and the covariance of the scaled score
phi(y) = u(y) * sqrt(f_theta(y) / g(y)) / 4 (meat).  Variances scale with the
variance-adaptive effective sample size and, for without-replacement designs,
a finite-population correction.  Confidence intervals are Wald intervals;
population summaries (mean, median) get Monte-Carlo intervals from draws of
the asymptotic distribution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .errors import (
    ConvergenceError,
    DegenerateCurvatureError,
    InstabilityError,
    SvymhdeError,
)
from .designs import SRS_WOR, SurveySample
from .families import Family
from .mhde import MhdeFit
from .quadrature import build_grid

# Relative floor for the plug-in density when dividing by it; nodes where the
# estimate underflows contribute nothing to the scaled score.
_DENSITY_RATIO_FLOOR = 1e-12


@dataclass(frozen=True)
class SandwichParts:
    """Curvature (bread) and score covariance (meat) of the sandwich."""

    curvature: np.ndarray  # negative Hessian of the affinity at the estimate
    score_cov: np.ndarray
    n_v_eff: float
    fpc: float

    def covariance(self) -> np.ndarray:
        """Unscaled sandwich curvature^-1 @ score_cov @ curvature^-T."""
        inv = np.linalg.inv(self.curvature)
        return inv @ self.score_cov @ inv.T

    def scaled_covariance(self) -> np.ndarray:
        """Finite-sample covariance of the estimate: fpc * sandwich / n_v_eff."""
        return self.fpc * self.covariance() / self.n_v_eff


@dataclass(frozen=True)
class ConfInterval:
    level: float
    lower: np.ndarray
    upper: np.ndarray
    relative_width: np.ndarray  # half-width relative to the point estimate


@dataclass(frozen=True)
class PopulationStats:
    mean: float
    mean_ci: tuple
    median: float
    median_ci: tuple
    level: float
    draws: int


def phi_at(family: Family, theta, g_values, y_nodes) -> np.ndarray:
    """Scaled score u(y) sqrt(f_theta(y)/g(y)) / 4 at the given nodes.

    Nodes where g falls below 1e-12 of its peak contribute zero, avoiding
    blowups where the plug-in density underflows in the tails.
    """
    g = np.asarray(g_values, dtype=float)
    floor = _DENSITY_RATIO_FLOOR * g.max()
    mask = g > floor
    out = np.zeros((y_nodes.size, 2))
    if np.any(mask):
        yv = y_nodes[mask]
        u = family.score(theta, yv)
        ratio = np.sqrt(family.density(theta, yv) / g[mask])
        out[mask] = 0.25 * u * ratio[:, None]
    return out


def model_grid(family: Family, theta, subdivisions: int = 400, tail: float = 1e-10):
    """Log-spaced quadrature grid over the central mass of f_theta.

    Returns (y_nodes, linear_weights): integrating v(y) over the support is
    sum(linear_weights * v(y_nodes)); the log-space change of variables keeps
    peaked or heavy-tailed densities (lognormal) well resolved.
    """
    q_lo = float(family.quantile(theta, tail))
    q_hi = float(family.quantile(theta, 1.0 - tail))
    grid = build_grid(np.log(q_lo), np.log(q_hi), subdivisions)
    y = np.exp(grid.nodes)
    return y, grid.kronrod_weights * y


def fisher_information(family: Family, theta, subdivisions: int = 400) -> np.ndarray:
    """Expected information E[u u^T] under the model, by quadrature."""
    theta = family.validate(theta)
    y, w = model_grid(family, theta, subdivisions)
    u = family.score(theta, y)
    f = family.density(theta, y)
    return np.einsum("k,ki,kj->ij", w * f, u, u)


def sigma_matrix(family: Family, theta, g_values, y_nodes, lin_weights) -> np.ndarray:
    """Score covariance integral of phi phi^T g over the nodes."""
    phi = phi_at(family, theta, g_values, y_nodes)
    return np.einsum("k,ki,kj->ij", lin_weights * np.asarray(g_values, dtype=float), phi, phi)


def _smooth_columns(values, y_nodes, lin_weights, h, kernel):
    """Kernel-convolved columns (K_h * v)(y) on the grid, windowed."""
    radius = kernel.effective_radius * h
    out = np.zeros_like(values)
    chunk = 256
    base = lin_weights[:, None] * values
    for start in range(0, y_nodes.size, chunk):
        yc = y_nodes[start : start + chunk]
        lo = np.searchsorted(y_nodes, yc[0] - radius, side="left")
        hi = np.searchsorted(y_nodes, yc[-1] + radius, side="right")
        if lo == hi:
            continue
        u = (yc[:, None] - y_nodes[None, lo:hi]) / h
        out[start : start + chunk] = (kernel.values(u) / h) @ base[lo:hi]
    return out


def smoothed_sigma_matrix(family: Family, theta, y_nodes, lin_weights, h, kernel) -> np.ndarray:
    """Finite-bandwidth score covariance (1/16) E[(K_h*u)(K_h*u)^T].

    The design fluctuation of the affinity gradient averages the
    kernel-smoothed scores, so at bandwidth h the variance involves K_h * u
    rather than u; the raw version overstates the variance by exactly the
    smoothing that also flattens the affinity curvature, which fattens the
    intervals.  Evaluated at the fitted model (where the density ratio in
    the scaled score cancels), keeping the tails of the convolution stable.
    Both versions share the h -> 0 limit E[u u^T]/16.
    """
    u = family.score(theta, y_nodes)
    psi = _smooth_columns(u, y_nodes, lin_weights, h, kernel)
    f = family.density(theta, y_nodes)
    return np.einsum("k,ki,kj->ij", lin_weights * f, psi, psi) / 16.0


def curvature_matrix(affinity_fn, theta, rel_step: float = 1e-4) -> np.ndarray:
    """Negative Hessian of the affinity by central finite differences.

    Steps are max(rel_step*|theta_j|, 1e-6) per coordinate; the result is
    symmetrized.  Raises :class:`DegenerateCurvatureError` when the matrix is
    not positive definite.
    """
    theta = np.asarray(theta, dtype=float)
    steps = np.maximum(rel_step * np.abs(theta), 1e-6)
    hess = np.empty((2, 2))
    f0 = affinity_fn(theta)
    for j in range(2):
        e = np.zeros(2)
        e[j] = steps[j]
        hess[j, j] = (affinity_fn(theta + e) - 2.0 * f0 + affinity_fn(theta - e)) / steps[j] ** 2
    e0 = np.array([steps[0], 0.0])
    e1 = np.array([0.0, steps[1]])
    cross = (
        affinity_fn(theta + e0 + e1)
        - affinity_fn(theta + e0 - e1)
        - affinity_fn(theta - e0 + e1)
        + affinity_fn(theta - e0 - e1)
    ) / (4.0 * steps[0] * steps[1])
    hess[0, 1] = hess[1, 0] = cross
    curv = -0.5 * (hess + hess.T)
    eig = np.linalg.eigvalsh(curv)
    if np.any(eig <= 0):
        raise DegenerateCurvatureError(
            f"affinity curvature is not positive definite (eigenvalues {eig})",
            eigenvalues=eig,
        )
    return curv


def sandwich(
    fit: MhdeFit,
    sample: Optional[SurveySample],
    family: Family,
    plug_in: str = "kde",
) -> SandwichParts:
    """Assemble the sandwich parts at the fitted estimate.

    ``plug_in="kde"`` (default) uses the fitted density estimate both inside
    the scaled score and as the integrating density, honoring possible model
    misspecification.  ``plug_in="model"`` replaces it by the fitted
    parametric density, which reproduces the efficient covariance (the
    inverse information) when the model holds.
    """
    if not fit.converged:
        raise ConvergenceError("sandwich requires a converged fit", last=fit.theta_hat)
    theta = fit.theta_hat
    if plug_in == "kde":
        nodes = fit.grid.nodes
        lin_w = fit.grid.kronrod_weights
        g_vals = fit.dens_values
        sqrt_g = np.sqrt(g_vals)

        def aff(th):
            logf = family.log_density(family.validate(th), nodes)
            return float((lin_w * sqrt_g) @ np.exp(0.5 * logf))

    elif plug_in == "model":
        nodes, lin_w = model_grid(family, theta)
        g_vals = family.density(theta, nodes)
        sqrt_g = np.sqrt(g_vals)

        def aff(th):
            logf = family.log_density(family.validate(th), nodes)
            return float((lin_w * sqrt_g) @ np.exp(0.5 * logf))

    else:
        raise SvymhdeError(f"unknown plug_in {plug_in!r}")

    curv = curvature_matrix(aff, theta)
    if plug_in == "kde" and fit.kde is not None:
        score_cov = smoothed_sigma_matrix(
            family, theta, nodes, lin_w, fit.kde.h, fit.kde.kernel
        )
    else:
        score_cov = sigma_matrix(family, theta, g_vals, nodes, lin_w)

    meta = sample.design_meta if sample is not None else None
    if meta is not None:
        n_v_eff = meta.n_v_eff
        fpc = 1.0 - meta.alpha if meta.kind == SRS_WOR else 1.0
    else:
        n_v_eff = fit.n_v_eff_used
        fpc = 1.0
        if not np.isfinite(n_v_eff) or n_v_eff <= 0:
            if sample is None:
                raise SvymhdeError("no effective sample size available for inference")
            from .designs import kish_neff

            n_v_eff = kish_neff(sample.weight)
    return SandwichParts(
        curvature=curv, score_cov=score_cov, n_v_eff=float(n_v_eff), fpc=float(fpc)
    )


def confint(fit: MhdeFit, parts: SandwichParts, level: float = 0.95) -> ConfInterval:
    """Wald interval theta_j +- z * sqrt(fpc * cov_jj / n_v_eff).

    ``relative_width`` reports the half-width divided by the point estimate
    (the +- percentage convention used for survey summaries).
    """
    if not 0.0 < level < 1.0:
        raise SvymhdeError(f"level must be in (0, 1), got {level}")
    z = special.ndtri(0.5 * (1.0 + level))
    se = np.sqrt(np.diag(parts.scaled_covariance()))
    theta = fit.theta_hat
    half = z * se
    return ConfInterval(
        level=level,
        lower=theta - half,
        upper=theta + half,
        relative_width=half / np.abs(theta),
    )


def population_stats(
    fit: MhdeFit,
    parts: SandwichParts,
    family: Family,
    draws: int = 10_000,
    rng: Optional[np.random.Generator] = None,
    level: float = 0.95,
) -> PopulationStats:
    """Model mean and median with Monte-Carlo confidence intervals.

    Intervals are percentile intervals of the closed-form statistics over
    parameter draws from the asymptotic normal distribution; draws outside
    the parameter domain are rejected and redrawn.
    """
    if draws < 100:
        raise SvymhdeError("population_stats needs at least 100 draws")
    rng = rng if rng is not None else np.random.default_rng()
    theta = fit.theta_hat
    cov = parts.scaled_covariance()
    point_mean = family.mean(theta)
    point_median = family.median(theta)
    if np.allclose(cov, 0.0):
        return PopulationStats(
            mean=point_mean,
            mean_ci=(point_mean, point_mean),
            median=point_median,
            median_ci=(point_median, point_median),
            level=level,
            draws=draws,
        )
    # Eigenvalue square root tolerates semi-definite covariances.
    vals, vecs = np.linalg.eigh(cov)
    root = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))
    accepted = []
    proposed = 0
    lower = np.array(family.lower_bounds)
    while sum(a.shape[0] for a in accepted) < draws:
        batch = max(draws, 1024)
        cand = theta + rng.standard_normal((batch, 2)) @ root.T
        proposed += batch
        ok = np.all(cand > lower, axis=1)
        accepted.append(cand[ok])
        n_acc = sum(a.shape[0] for a in accepted)
        if proposed >= 2 * draws and n_acc < 0.5 * proposed:
            raise InstabilityError(
                f"more than 50% of parameter draws rejected "
                f"({proposed - n_acc}/{proposed}); the asymptotic "
                "approximation is unreliable here"
            )
    thetas = np.vstack(accepted)[:draws]
    means = np.array([family.mean(t) for t in thetas])
    medians = np.array([family.median(t) for t in thetas])
    qs = [0.5 * (1.0 - level), 0.5 * (1.0 + level)]
    mean_ci = tuple(np.quantile(means, qs))
    median_ci = tuple(np.quantile(medians, qs))
    return PopulationStats(
        mean=point_mean,
        mean_ci=mean_ci,
        median=point_median,
        median_ci=median_ci,
        level=level,
        draws=draws,
    )
