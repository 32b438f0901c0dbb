"""Contamination mechanisms, influence functions and alpha-influence curves.

The influence diagnostics work at the population level: the estimator
functional is applied to the mixture (1-eps) * f_theta0 + eps * contamination
on a fixed quadrature grid, so no sampling noise enters.  A point mass at z
is realized as a narrow normal (an atom is not representable on a quadrature
grid); the sampling design plays no role here because it does not enter the
estimator functional.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import special
from scipy.optimize import brentq

from .errors import DegenerateCurvatureError, DesignError, SvymhdeError
from .designs import SurveySample
from .families import Family
from .mhde import MhdeOptions, fit_density, polish_stationary_point
from .quadrature import build_refined_grid

POINT_NORMAL = "point_normal"
TRUNC_T = "trunc_t"
_MECHANISMS = (POINT_NORMAL, TRUNC_T)

INDEPENDENT = "independent"
HIGH_LEVERAGE = "high_leverage"

# Selection weight rules for high-leverage contamination.  "printed" follows
# the (1 - pi)^-10 form as published, which mildly favors *large* inclusion
# probabilities; "inverse_pi" uses pi^-10 and targets the large survey
# weights instead.  See the package README for the discrepancy note.
PRINTED_RULE = "printed"
INVERSE_PI_RULE = "inverse_pi"


@dataclass(frozen=True)
class ContaminationSpec:
    """How to contaminate a sample: fraction, mechanism, location, targeting."""

    epsilon: float
    mechanism: str = POINT_NORMAL
    z: float = 0.0
    leverage: str = INDEPENDENT
    df: int = 3
    high_leverage_rule: str = PRINTED_RULE

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 0.5:
            raise SvymhdeError(f"epsilon must be in [0, 0.5], got {self.epsilon}")
        if self.mechanism not in _MECHANISMS:
            raise SvymhdeError(f"unknown mechanism {self.mechanism!r}")
        if self.epsilon > 0 and self.z <= 0:
            raise SvymhdeError("contamination location z must be positive")
        if self.leverage not in (INDEPENDENT, HIGH_LEVERAGE):
            raise SvymhdeError(f"unknown leverage mode {self.leverage!r}")
        if self.df != 3:
            raise SvymhdeError("the truncated-t mechanism is fixed at 3 degrees of freedom")


class TruncatedT:
    """Location-scale t(3) truncated to (0, inf), mode z, variance-matched.

    The scale is solved so the truncated distribution has the requested
    variance; sampling is by inversion of the truncated CDF.
    """

    def __init__(self, z: float, target_variance: float, df: int = 3):
        if z <= 0:
            raise SvymhdeError("truncated-t mode must be positive")
        if target_variance <= 0:
            raise SvymhdeError("target variance must be positive")
        self.z = float(z)
        self.df = df
        self.scale = self._solve_scale(target_variance)
        self._lower_u = special.stdtr(self.df, -self.z / self.scale)

    # Standard-t(3) partial moment antiderivatives over (L, inf):
    # the density is c3 * 9 / (3 + u^2)^2 with c3 = 2 / (pi sqrt(3)), and
    # u^k/(3+u^2)^2 integrates in closed (rational + arctan) form.
    @staticmethod
    def _partial_moments(L: float):
        c9 = 9.0 * 2.0 / (np.pi * np.sqrt(3.0))

        def f0(u):
            return c9 * (u / (6.0 * (3.0 + u * u)) + np.arctan(u / np.sqrt(3.0)) / (6.0 * np.sqrt(3.0)))

        def f1(u):
            return c9 * (-1.0 / (2.0 * (3.0 + u * u)))

        def f2(u):
            return c9 * (-u / (2.0 * (3.0 + u * u)) + np.arctan(u / np.sqrt(3.0)) / (2.0 * np.sqrt(3.0)))

        at_inf = np.array([c9 * np.pi / (12.0 * np.sqrt(3.0)), 0.0, c9 * np.pi / (4.0 * np.sqrt(3.0))])
        return at_inf - np.array([f0(L), f1(L), f2(L)])

    def _truncated_var(self, scale: float) -> float:
        m0, m1, m2 = self._partial_moments(-self.z / scale)
        mean_u = m1 / m0
        return scale * scale * (m2 / m0 - mean_u * mean_u)

    def _solve_scale(self, target: float) -> float:
        # Untruncated sd of a scale-c t(3) is c*sqrt(3); the truncated
        # variance is monotone increasing in c, so bracket around it.
        c0 = np.sqrt(target / 3.0)
        lo, hi = 1e-3 * c0, 1e3 * c0
        return brentq(lambda c: self._truncated_var(c) - target, lo, hi, xtol=1e-10 * c0)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        u = (x - self.z) / self.scale
        base = (
            special.gamma((self.df + 1) / 2)
            / (np.sqrt(self.df * np.pi) * special.gamma(self.df / 2))
            * (1.0 + u * u / self.df) ** (-(self.df + 1) / 2)
        )
        out = base / (self.scale * (1.0 - self._lower_u))
        return np.where(x > 0, out, 0.0)

    def sample(self, n: int, rng: np.random.Generator):
        v = self._lower_u + rng.random(n) * (1.0 - self._lower_u)
        return self.z + self.scale * special.stdtrit(self.df, v)


def _normal_pdf(x, mean, sd):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * ((x - mean) / sd) ** 2) / (sd * np.sqrt(2.0 * np.pi))


def contamination_density(cspec: ContaminationSpec, family: Family, theta_true):
    """Callable density of the contaminating distribution."""
    var_y = family.variance(theta_true)
    if cspec.mechanism == POINT_NORMAL:
        sd = 0.1 * np.sqrt(var_y)
        return lambda x: _normal_pdf(x, cspec.z, sd)
    return TruncatedT(cspec.z, var_y, cspec.df).pdf


def _select_indices(n, k, cspec: ContaminationSpec, pi, rng):
    if cspec.leverage == INDEPENDENT:
        return rng.choice(n, size=k, replace=False)
    if pi is None:
        raise DesignError("high-leverage contamination needs inclusion probabilities")
    pi = np.asarray(pi, dtype=float)
    if cspec.high_leverage_rule == INVERSE_PI_RULE:
        raw = pi**-10.0
    else:
        with np.errstate(divide="ignore"):
            raw = np.where(pi >= 1.0, np.inf, (1.0 - pi) ** -10.0)
    certain = np.nonzero(np.isinf(raw))[0]
    if certain.size >= k:
        return rng.choice(certain, size=k, replace=False)
    chosen = [certain]
    rest = np.setdiff1d(np.arange(n), certain, assume_unique=False)
    p = raw[rest] / raw[rest].sum()
    chosen.append(rng.choice(rest, size=k - certain.size, replace=False, p=p))
    return np.concatenate(chosen)


def contaminate(
    sample: SurveySample,
    cspec: ContaminationSpec,
    family: Family,
    theta_true,
    rng: np.random.Generator,
) -> SurveySample:
    """Replace floor(eps*n) responses with draws from the contamination law.

    Independent targeting picks units uniformly without replacement;
    high-leverage targeting picks without replacement with probabilities
    given by the configured selection rule.  Normal draws are truncated to
    the positive axis by redrawing.
    """
    n = sample.n
    k = int(np.floor(cspec.epsilon * n))
    if k == 0:
        return sample
    idx = _select_indices(n, k, cspec, sample.pi, rng)
    if cspec.mechanism == POINT_NORMAL:
        sd = 0.1 * np.sqrt(family.variance(theta_true))
        values = rng.normal(cspec.z, sd, size=k)
        for _ in range(1000):
            bad = values <= 0
            if not np.any(bad):
                break
            values[bad] = rng.normal(cspec.z, sd, size=int(bad.sum()))
        else:
            raise SvymhdeError("point-normal contamination kept producing non-positive draws")
    else:
        values = TruncatedT(cspec.z, family.variance(theta_true), cspec.df).sample(k, rng)
    y = sample.y.copy()
    y[idx] = values
    return replace(sample, y=y)


# -- population-level influence diagnostics ---------------------------------

_INFLUENCE_OPTS = MhdeOptions(grid_subdivisions=200, nm_tol=1e-10, nm_max_iter=4000, restarts=0)


def _mixture_setup(family: Family, theta0, z, sd, subdivisions, tail=1e-9):
    """Fixed grid covering the model mass plus a refined contamination window."""
    lo = float(family.quantile(theta0, tail))
    hi = max(float(family.quantile(theta0, 1.0 - tail)), z + 12.0 * sd)
    lo = min(lo, max(z - 12.0 * sd, 1e-12))
    grid = build_refined_grid(0.0, hi, subdivisions, refine=[(z - 12.0 * sd, z + 12.0 * sd, 96)])
    g0 = family.density(theta0, grid.nodes)
    return grid, g0


def empirical_influence(
    family: Family,
    theta0,
    z: float,
    epsilon: float = 1e-3,
    opts: Optional[MhdeOptions] = None,
    point_sd: Optional[float] = None,
    contam_density=None,
) -> np.ndarray:
    """Finite-difference Gateaux influence (T(G_eps) - theta0) / eps.

    Everything happens at the population level on a quadrature grid: the
    point mass at z is smeared into a normal with sd = max(1e-3 z, given)
    unless ``contam_density`` overrides it, the mixture density is formed
    analytically, and the same simplex search as the data path maximizes the
    affinity (followed by a Newton polish, which the tiny parameter shifts
    at small epsilon require).
    """
    theta0 = family.validate(theta0)
    if epsilon <= 0:
        raise SvymhdeError("epsilon must be positive")
    opts = opts or _INFLUENCE_OPTS
    sd = point_sd if point_sd is not None else max(1e-3 * z, 1e-12)
    grid, g0 = _mixture_setup(family, theta0, z, sd, opts.grid_subdivisions)
    contam = contam_density(grid.nodes) if contam_density is not None \
        else _normal_pdf(grid.nodes, z, sd)
    mix = (1.0 - epsilon) * g0 + epsilon * contam
    fit = fit_density(mix, grid, family, opts, init_theta=theta0)
    # Difference against the grid's own uncontaminated maximizer: the shared
    # discretization offset cancels, which matters once epsilon is tiny.
    base, _ = polish_stationary_point(
        family, theta0, grid.nodes, grid.kronrod_weights, np.sqrt(g0)
    )
    return (fit.theta_hat - base) / epsilon


def analytic_influence(family: Family, theta0, z: float) -> np.ndarray:
    """Closed-form influence -Q^{-1} phi(z) at the model.

    Q is the Jacobian of the affinity gradient: one half the integral of
    [score Jacobian + score outer-product / 2] * sqrt(f_theta0 * g) with
    g = f_theta0, computed by quadrature; phi(z) = score(z) / 4 since the
    density ratio is one at the model.
    """
    theta0 = family.validate(theta0)
    fz = family.density(theta0, z)
    if fz <= 0:
        raise SvymhdeError(f"analytic influence needs f(z) > 0 at z={z}")
    from .inference import model_grid  # local import avoids a cycle at import time

    y, w = model_grid(family, theta0, subdivisions=400)
    f = family.density(theta0, y)
    u = family.score(theta0, y)
    jac = family.score_jacobian(theta0, y)
    outer = np.einsum("ki,kj->kij", u, u)
    q = 0.5 * np.einsum("k,kij->ij", w * f, jac + 0.5 * outer)
    eig = np.linalg.eigvalsh(q)
    if np.any(np.abs(eig) < 1e-14):
        raise DegenerateCurvatureError(
            f"affinity gradient Jacobian is singular (eigenvalues {eig})", eigenvalues=eig
        )
    phi_z = 0.25 * family.score(theta0, float(z))
    return -np.linalg.solve(q, phi_z)


@dataclass(frozen=True)
class CurvePoint:
    epsilon: float
    estimator: str
    theta: np.ndarray
    converged: bool


def alpha_curve(
    family: Family,
    theta0,
    z: float,
    eps_grid,
    mechanism: str = POINT_NORMAL,
    include_mle: bool = True,
    opts: Optional[MhdeOptions] = None,
    point_sd: Optional[float] = None,
) -> list[CurvePoint]:
    """Population-level bias path T(G_eps) along a contamination grid.

    Successive fits are warm-started from the previous solution (the path is
    continuous in eps), so the grid is traversed in ascending order.  The MLE
    path is computed on the same mixtures by weighted maximum likelihood on
    the quadrature nodes.
    """
    theta0 = family.validate(theta0)
    eps_grid = np.asarray(sorted(np.atleast_1d(eps_grid).tolist()), dtype=float)
    if np.any(eps_grid < 0) or np.any(eps_grid > 0.5):
        raise SvymhdeError("eps grid must lie within [0, 0.5]")
    opts = opts or _INFLUENCE_OPTS
    if mechanism == POINT_NORMAL:
        sd = point_sd if point_sd is not None else max(1e-3 * z, 1e-12)
        contam_pdf = lambda x: _normal_pdf(x, z, sd)
        window_sd = sd
    elif mechanism == TRUNC_T:
        tt = TruncatedT(z, family.variance(theta0), df=3)
        contam_pdf = tt.pdf
        window_sd = max(tt.scale * 4.0, 1e-12)
    else:
        raise SvymhdeError(f"unknown mechanism {mechanism!r}")
    grid, g0 = _mixture_setup(family, theta0, z, window_sd, opts.grid_subdivisions)
    contam = contam_pdf(grid.nodes)

    points: list[CurvePoint] = []
    warm = theta0
    for eps in eps_grid:
        mix = (1.0 - eps) * g0 + eps * contam
        try:
            fit = fit_density(mix, grid, family, opts, init_theta=warm)
            theta, ok = fit.theta_hat, fit.converged
            warm = theta
        except SvymhdeError:
            theta, ok = np.full(2, np.nan), False
        points.append(CurvePoint(float(eps), "mhde", theta, ok))
        if include_mle:
            mask = mix > 0
            try:
                theta_mle = family.weighted_mle(
                    grid.nodes[mask], grid.kronrod_weights[mask] * mix[mask]
                )
                points.append(CurvePoint(float(eps), "mle", theta_mle, True))
            except SvymhdeError:
                points.append(CurvePoint(float(eps), "mle", np.full(2, np.nan), False))
    return points
