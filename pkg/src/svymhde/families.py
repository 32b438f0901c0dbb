"""Two-parameter superpopulation families: gamma, weibull, lognormal.

Each family bundles the density, score (gradient of the log density), the
score Jacobian, closed-form moments and quantiles, a seeded sampler, a
moment-based initializer, and the weighted maximum-likelihood solver used as
the reference estimator.  All operations are pure functions of their inputs;
random draws always consume an explicitly passed generator.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .errors import (
    ConvergenceError,
    DegenerateSampleError,
    ParameterDomainError,
    SupportError,
)
from ._wstats import weighted_mean, weighted_var

_EULER_GAMMA = float(np.euler_gamma)
_DOMAIN_FLOOR = 1e-8


class Family:
    """Base class; subclasses define a positive-support 2-parameter density."""

    family_id: str = ""
    param_names: tuple[str, str] = ("", "")
    # Open lower bounds per parameter; -inf marks an unrestricted coordinate.
    lower_bounds: tuple[float, float] = (0.0, 0.0)

    # -- domain ---------------------------------------------------------

    def validate(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (2,):
            raise ParameterDomainError(
                f"{self.family_id}: expected 2 parameters, got shape {theta.shape}"
            )
        if not np.all(np.isfinite(theta)):
            raise ParameterDomainError(f"{self.family_id}: non-finite parameters {theta}")
        for j, (value, bound) in enumerate(zip(theta, self.lower_bounds)):
            if value <= bound:
                raise ParameterDomainError(
                    f"{self.family_id}: {self.param_names[j]}={value} violates "
                    f"open bound > {bound}"
                )
        return theta

    def in_domain(self, theta) -> bool:
        try:
            self.validate(theta)
        except ParameterDomainError:
            return False
        return True

    # -- density and score ----------------------------------------------

    def log_density(self, theta, y):
        raise NotImplementedError

    def density(self, theta, y):
        """f_theta(y); zero outside the support (y <= 0)."""
        theta = self.validate(theta)
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y, dtype=float)
        mask = y > 0
        if np.any(mask):
            out[mask] = np.exp(self.log_density(theta, y[mask]))
        return out if out.ndim else float(out)

    def log_density_multi(self, thetas, y):
        """log f over a (T, 2) parameter array and (K,) nodes -> (T, K)."""
        raise NotImplementedError

    def score(self, theta, y):
        """Gradient of log f_theta at y; y must lie in the support interior."""
        raise NotImplementedError

    def score_jacobian(self, theta, y):
        """Jacobian of the score in theta, shape (..., 2, 2)."""
        raise NotImplementedError

    def _check_support(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if np.any(y <= 0):
            raise SupportError(f"{self.family_id}: observations must be > 0")
        return y

    # -- sampling and distribution functions -----------------------------

    def sample(self, theta, n, rng):
        raise NotImplementedError

    def cdf(self, theta, y):
        raise NotImplementedError

    def quantile(self, theta, p):
        raise NotImplementedError

    def mean(self, theta) -> float:
        raise NotImplementedError

    def median(self, theta) -> float:
        raise NotImplementedError

    def variance(self, theta) -> float:
        raise NotImplementedError

    # -- estimation -------------------------------------------------------

    def moment_init(self, y, w) -> np.ndarray:
        raise NotImplementedError

    def weighted_mle(self, y, w) -> np.ndarray:
        raise NotImplementedError

    def _clamp(self, theta) -> np.ndarray:
        floors = np.array(
            [b + _DOMAIN_FLOOR if np.isfinite(b) else -np.inf for b in self.lower_bounds]
        )
        return np.maximum(np.asarray(theta, dtype=float), floors)

    def _check_mle_gradient(self, theta, y, w, tol=1e-8):
        grad = np.sum(w[:, None] * self.score(theta, y), axis=0)
        scale = np.maximum(np.abs(theta), 1.0)
        rel = np.max(np.abs(grad) * scale) / np.sum(w)
        if not rel < tol:
            raise ConvergenceError(
                f"{self.family_id} weighted MLE: relative gradient {rel:.3e} "
                f"above {tol:.0e}",
                last=theta,
                diagnostics={"rel_gradient": rel},
            )


class GammaFamily(Family):
    """Gamma(shape, scale): f(y) = y^(k-1) exp(-y/s) / (Gamma(k) s^k)."""

    family_id = "gamma"
    param_names = ("shape", "scale")
    lower_bounds = (0.0, 0.0)

    def log_density(self, theta, y):
        k, s = theta
        y = np.asarray(y, dtype=float)
        return (k - 1.0) * np.log(y) - y / s - special.gammaln(k) - k * np.log(s)

    def log_density_multi(self, thetas, y):
        k = thetas[:, 0][:, None]
        s = thetas[:, 1][:, None]
        logy = np.log(y)[None, :]
        return (k - 1.0) * logy - y[None, :] / s - special.gammaln(k) - k * np.log(s)

    def score(self, theta, y):
        k, s = self.validate(theta)
        y = self._check_support(y)
        d_shape = np.log(y / s) - special.digamma(k)
        d_scale = (y - k * s) / s**2
        return np.stack(np.broadcast_arrays(d_shape, d_scale), axis=-1)

    def score_jacobian(self, theta, y):
        k, s = self.validate(theta)
        y = self._check_support(y)
        shape = np.shape(y)
        jac = np.empty(shape + (2, 2))
        jac[..., 0, 0] = -special.polygamma(1, k)
        jac[..., 0, 1] = -1.0 / s
        jac[..., 1, 0] = -1.0 / s
        jac[..., 1, 1] = k / s**2 - 2.0 * y / s**3
        return jac

    def sample(self, theta, n, rng):
        k, s = self.validate(theta)
        return rng.gamma(k, s, size=n)

    def cdf(self, theta, y):
        k, s = self.validate(theta)
        return special.gammainc(k, np.asarray(y, dtype=float) / s)

    def quantile(self, theta, p):
        k, s = self.validate(theta)
        return s * special.gammaincinv(k, p)

    def mean(self, theta):
        k, s = theta
        return float(k * s)

    def median(self, theta):
        k, s = self.validate(theta)
        return float(s * special.gammaincinv(k, 0.5))

    def variance(self, theta):
        k, s = theta
        return float(k * s**2)

    def moment_init(self, y, w):
        m = weighted_mean(y, w)
        v = weighted_var(y, w)
        if v <= 0:
            raise DegenerateSampleError("gamma moment init: weighted variance is 0")
        return self._clamp([m * m / v, v / m])

    def weighted_mle(self, y, w):
        y = self._check_support(y)
        w = np.asarray(w, dtype=float)
        m = weighted_mean(y, w)
        c = np.log(m) - weighted_mean(np.log(y), w)
        if c <= 0:
            raise DegenerateSampleError("gamma MLE: zero log-moment spread")
        # Profile likelihood in the shape: solve log(k) - digamma(k) = c.
        k = (3.0 - c + np.sqrt((c - 3.0) ** 2 + 24.0 * c)) / (12.0 * c)
        k = _newton_safeguarded(
            lambda k: np.log(k) - special.digamma(k) - c,
            lambda k: 1.0 / k - special.polygamma(1, k),
            x0=k,
            lo=1e-10,
            hi=1e10,
        )
        theta = np.array([k, m / k])
        self._check_mle_gradient(theta, y, w)
        return theta


class WeibullFamily(Family):
    """Weibull(shape, scale): f(y) = (k/l) (y/l)^(k-1) exp(-(y/l)^k)."""

    family_id = "weibull"
    param_names = ("shape", "scale")
    lower_bounds = (0.0, 0.0)

    def log_density(self, theta, y):
        k, lam = theta
        y = np.asarray(y, dtype=float)
        z = y / lam
        return np.log(k / lam) + (k - 1.0) * np.log(z) - z**k

    def log_density_multi(self, thetas, y):
        k = thetas[:, 0][:, None]
        lam = thetas[:, 1][:, None]
        logz = np.log(y)[None, :] - np.log(lam)
        return np.log(k / lam) + (k - 1.0) * logz - np.exp(k * logz)

    def score(self, theta, y):
        k, lam = self.validate(theta)
        y = self._check_support(y)
        logz = np.log(y / lam)
        zk = np.exp(k * logz)
        d_shape = 1.0 / k + logz * (1.0 - zk)
        d_scale = (k / lam) * (zk - 1.0)
        return np.stack(np.broadcast_arrays(d_shape, d_scale), axis=-1)

    def score_jacobian(self, theta, y):
        k, lam = self.validate(theta)
        y = self._check_support(y)
        logz = np.log(y / lam)
        zk = np.exp(k * logz)
        shape = np.shape(y)
        jac = np.empty(shape + (2, 2))
        jac[..., 0, 0] = -1.0 / k**2 - zk * logz**2
        # d/dlam of the shape component == d/dk of the scale component
        cross = -1.0 / lam + (zk / lam) * (1.0 + k * logz)
        jac[..., 0, 1] = cross
        jac[..., 1, 0] = cross
        jac[..., 1, 1] = k / lam**2 - (k * (k + 1.0) / lam**2) * zk
        return jac

    def sample(self, theta, n, rng):
        k, lam = self.validate(theta)
        return lam * rng.weibull(k, size=n)

    def cdf(self, theta, y):
        k, lam = self.validate(theta)
        y = np.asarray(y, dtype=float)
        return -np.expm1(-((y / lam) ** k))

    def quantile(self, theta, p):
        k, lam = self.validate(theta)
        return lam * (-np.log1p(-np.asarray(p, dtype=float))) ** (1.0 / k)

    def mean(self, theta):
        k, lam = theta
        return float(lam * special.gamma(1.0 + 1.0 / k))

    def median(self, theta):
        k, lam = theta
        return float(lam * np.log(2.0) ** (1.0 / k))

    def variance(self, theta):
        k, lam = theta
        g1 = special.gamma(1.0 + 1.0 / k)
        g2 = special.gamma(1.0 + 2.0 / k)
        return float(lam**2 * (g2 - g1**2))

    def moment_init(self, y, w):
        # log Y is Gumbel: Var(log Y) = pi^2 / (6 k^2), E log Y = log(lam) - g/k.
        logy = np.log(self._check_support(y))
        v = weighted_var(logy, w)
        if v <= 0:
            raise DegenerateSampleError("weibull moment init: weighted log-variance is 0")
        k = np.pi / np.sqrt(6.0 * v)
        lam = np.exp(weighted_mean(logy, w) + _EULER_GAMMA / k)
        return self._clamp([k, lam])

    def weighted_mle(self, y, w):
        y = self._check_support(y)
        w = np.asarray(w, dtype=float)
        logy = np.log(y)
        mean_log = weighted_mean(logy, w)
        lmax = logy.max()

        def moments(k):
            # Weighted power sums of y^k, stabilized by the max log value.
            e = w * np.exp(k * (logy - lmax))
            s0 = np.sum(e)
            s1 = np.sum(e * logy)
            s2 = np.sum(e * logy**2)
            return s0, s1, s2

        def g(k):
            s0, s1, _ = moments(k)
            return s1 / s0 - 1.0 / k - mean_log

        def gprime(k):
            s0, s1, s2 = moments(k)
            return (s2 * s0 - s1 * s1) / s0**2 + 1.0 / k**2

        k0 = self.moment_init(y, w)[0]
        k = _newton_safeguarded(g, gprime, x0=k0, lo=1e-10, hi=1e6)
        s0, _, _ = moments(k)
        log_lam = lmax + (np.log(s0) - np.log(np.sum(w))) / k
        theta = np.array([k, np.exp(log_lam)])
        self._check_mle_gradient(theta, y, w)
        return theta


class LognormalFamily(Family):
    """Lognormal(mu, sigma): log Y ~ N(mu, sigma^2)."""

    family_id = "lognormal"
    param_names = ("mu", "sigma")
    lower_bounds = (-np.inf, 0.0)

    def log_density(self, theta, y):
        mu, sig = theta
        y = np.asarray(y, dtype=float)
        z = (np.log(y) - mu) / sig
        return -np.log(y) - np.log(sig) - 0.5 * np.log(2.0 * np.pi) - 0.5 * z**2

    def log_density_multi(self, thetas, y):
        mu = thetas[:, 0][:, None]
        sig = thetas[:, 1][:, None]
        logy = np.log(y)[None, :]
        z = (logy - mu) / sig
        return -logy - np.log(sig) - 0.5 * np.log(2.0 * np.pi) - 0.5 * z**2

    def score(self, theta, y):
        mu, sig = self.validate(theta)
        y = self._check_support(y)
        z = np.log(y) - mu
        d_mu = z / sig**2
        d_sig = -1.0 / sig + z**2 / sig**3
        return np.stack(np.broadcast_arrays(d_mu, d_sig), axis=-1)

    def score_jacobian(self, theta, y):
        mu, sig = self.validate(theta)
        y = self._check_support(y)
        z = np.log(y) - mu
        shape = np.shape(y)
        jac = np.empty(shape + (2, 2))
        jac[..., 0, 0] = np.full(shape, -1.0 / sig**2)
        jac[..., 0, 1] = -2.0 * z / sig**3
        jac[..., 1, 0] = -2.0 * z / sig**3
        jac[..., 1, 1] = 1.0 / sig**2 - 3.0 * z**2 / sig**4
        return jac

    def sample(self, theta, n, rng):
        mu, sig = self.validate(theta)
        return rng.lognormal(mu, sig, size=n)

    def cdf(self, theta, y):
        mu, sig = self.validate(theta)
        return special.ndtr((np.log(np.asarray(y, dtype=float)) - mu) / sig)

    def quantile(self, theta, p):
        mu, sig = self.validate(theta)
        return np.exp(mu + sig * special.ndtri(p))

    def mean(self, theta):
        mu, sig = theta
        return float(np.exp(mu + 0.5 * sig**2))

    def median(self, theta):
        mu, _ = theta
        return float(np.exp(mu))

    def variance(self, theta):
        mu, sig = theta
        return float((np.exp(sig**2) - 1.0) * np.exp(2.0 * mu + sig**2))

    def moment_init(self, y, w):
        logy = np.log(self._check_support(y))
        v = weighted_var(logy, w)
        if v <= 0:
            raise DegenerateSampleError("lognormal moment init: weighted log-variance is 0")
        return self._clamp([weighted_mean(logy, w), np.sqrt(v)])

    def weighted_mle(self, y, w):
        # Closed form: weighted mean / SD of log y.
        theta = self.moment_init(y, w)
        self._check_mle_gradient(theta, y, w)
        return theta


def _newton_safeguarded(f, fprime, x0, lo, hi, tol=1e-13, max_iter=200):
    """Newton iteration on a monotone function, falling back to bisection.

    The bracket [lo, hi] is first tightened so that f changes sign; any Newton
    step leaving the bracket is replaced by its midpoint.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise ConvergenceError(
            "safeguarded Newton: no sign change on the search bracket",
            last=x0,
        )
    x = float(np.clip(x0, lo, hi))
    for _ in range(max_iter):
        fx = f(x)
        if np.sign(fx) == np.sign(flo):
            lo = x
        else:
            hi = x
        d = fprime(x)
        step = fx / d if d != 0 else np.inf
        x_new = x - step
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= tol * max(1.0, abs(x)):
            return x_new
        x = x_new
    raise ConvergenceError(
        f"safeguarded Newton: no convergence after {max_iter} iterations",
        last=x,
    )


GAMMA = GammaFamily()
WEIBULL = WeibullFamily()
LOGNORMAL = LognormalFamily()

_REGISTRY = {f.family_id: f for f in (GAMMA, WEIBULL, LOGNORMAL)}


def get_family(family_id: str) -> Family:
    """Look a family up by its string id ("gamma" | "weibull" | "lognormal")."""
    try:
        return _REGISTRY[family_id]
    except KeyError:
        raise ParameterDomainError(
            f"unknown family {family_id!r}; available: {sorted(_REGISTRY)}"
        ) from None


# Functional wrappers matching the operation-style API; `sample` here is a
# survey sample object carrying .y and .weight arrays.

def density(family: Family, theta, y):
    return family.density(theta, y)


def score(family: Family, theta, y):
    return family.score(family.validate(theta), y)


def sample(family: Family, theta, n, rng):
    return family.sample(theta, n, rng)


def weighted_mle(family: Family, svy) -> np.ndarray:
    return family.weighted_mle(np.asarray(svy.y, dtype=float), np.asarray(svy.weight, dtype=float))


def moment_init(family: Family, svy) -> np.ndarray:
    return family.moment_init(np.asarray(svy.y, dtype=float), np.asarray(svy.weight, dtype=float))
