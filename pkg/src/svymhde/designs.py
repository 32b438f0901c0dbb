"""Finite populations, sampling designs, survey weights and effective sizes.

Supported designs: Poisson sampling with probability proportional to size
(inclusion probabilities driven by a positive auxiliary variable), and simple
random sampling with or without replacement.  Weights are Horvitz-Thompson
inverses of the inclusion probabilities, optionally calibrated to known
cluster totals or truncated at a cap.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import special

from .errors import (
    CalibrationError,
    DesignError,
    EmptySampleError,
    SchemaError,
    SvymhdeError,
)
from .families import Family

POISSON_PPS = "poisson_pps"
SRS_WR = "srs_wr"
SRS_WOR = "srs_wor"
DESIGN_KINDS = (POISSON_PPS, SRS_WR, SRS_WOR)

N_CLUSTERS = 5


@dataclass(frozen=True)
class DesignSpec:
    """A sampling design: kind, population size and sampling fraction."""

    kind: str
    N: int
    alpha: float
    rho_yz: float = 0.0
    weight_truncation_cap: Optional[float] = None

    def __post_init__(self):
        if self.kind not in DESIGN_KINDS:
            raise DesignError(f"unknown design kind {self.kind!r}")
        if not 0.0 < self.alpha < 1.0:
            raise DesignError(f"sampling fraction must be in (0, 1), got {self.alpha}")
        if self.n < 2:
            raise DesignError(f"expected sample size round(alpha*N)={self.n} < 2")
        if self.kind == POISSON_PPS and not 0.0 <= self.rho_yz < 1.0:
            raise DesignError(f"rho_yz must be in [0, 1), got {self.rho_yz}")
        if self.weight_truncation_cap is not None and self.weight_truncation_cap <= 0:
            raise DesignError("weight_truncation_cap must be positive")

    @property
    def n(self) -> int:
        return int(round(self.alpha * self.N))


@dataclass(frozen=True, eq=False)
class Population:
    """A simulated finite population; immutable and shareable across threads."""

    y: np.ndarray
    z: np.ndarray
    cluster_id: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any(self.z <= 0):
            raise DesignError("auxiliary variable z must be strictly positive")

    @property
    def N(self) -> int:
        return self.y.size


@dataclass(frozen=True)
class DesignMeta:
    kind: str
    N: int
    alpha: float
    n_expected: int
    n_eff: float
    n_v_eff: float
    n_pi_capped: int = 0


@dataclass(frozen=True, eq=False)
class SurveySample:
    """Observed responses with inclusion probabilities / weights.

    ``weight`` is the working weight (possibly calibrated or truncated);
    ``base_weight`` keeps the pre-adjustment weights when an adjustment was
    applied.  All estimators downstream are invariant to rescaling every
    weight by one positive constant.
    """

    y: np.ndarray
    weight: np.ndarray
    pi: Optional[np.ndarray] = None
    design_meta: Optional[DesignMeta] = None
    base_weight: Optional[np.ndarray] = None
    truncated: int = 0

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        w = np.asarray(self.weight, dtype=float)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "weight", w)
        if y.size == 0:
            raise EmptySampleError("survey sample is empty")
        if y.shape != w.shape:
            raise SvymhdeError("y and weight must have matching shapes")
        if np.any(w <= 0):
            raise SvymhdeError("weights must be strictly positive")
        if self.pi is not None:
            pi = np.asarray(self.pi, dtype=float)
            object.__setattr__(self, "pi", pi)
            if np.any((pi <= 0) | (pi > 1)):
                raise SvymhdeError("inclusion probabilities must lie in (0, 1]")

    @property
    def n(self) -> int:
        return self.y.size


@dataclass(frozen=True)
class EffectiveSizes:
    n_eff: float
    n_v_eff: float
    census: bool = False


def simulate_population(
    family: Family,
    theta,
    N: int,
    rho_yz: float,
    rng: np.random.Generator,
    clusters: bool = False,
    z_sigma: float = 0.6,
) -> Population:
    """Draw an i.i.d. population of size N with a lognormal size variable.

    The (Y, Z) dependence is a Gaussian copula on ranks: normal scores of the
    Y ranks are mixed with fresh noise at correlation r = 2 sin(pi*rho/6), so
    the realized Spearman correlation is approximately ``rho_yz`` while the Y
    marginal stays exactly the family's sampler output.  ``z_sigma`` sets the
    log-scale dispersion of Z and therefore how unequal the PPS inclusion
    probabilities are; the default keeps the weight spread moderate.
    """
    if N < 10:
        raise DesignError("population size must be at least 10")
    if not 0.0 <= rho_yz < 1.0:
        raise DesignError(f"rho_yz must be in [0, 1), got {rho_yz}")
    if z_sigma <= 0:
        raise DesignError("z_sigma must be positive")
    y = family.sample(theta, N, rng)
    if rho_yz == 0.0:
        v = rng.standard_normal(N)
    else:
        r = 2.0 * np.sin(np.pi * rho_yz / 6.0)
        ranks = np.argsort(np.argsort(y, kind="stable"), kind="stable")
        scores = special.ndtri((ranks + 0.625) / (N + 0.25))  # Blom plotting positions
        v = r * scores + np.sqrt(1.0 - r * r) * rng.standard_normal(N)
    z = np.exp(z_sigma * v)
    cluster_id = rng.integers(1, N_CLUSTERS + 1, size=N) if clusters else None
    return Population(y=y, z=z, cluster_id=cluster_id)


def pps_inclusion_probs(z, n):
    """Raw PPS probabilities n*z/sum(z), capped at 1 without redistribution."""
    z = np.asarray(z, dtype=float)
    raw = n * z / np.sum(z)
    capped = int(np.count_nonzero(raw > 1.0))
    return np.minimum(raw, 1.0), capped


def draw_sample(pop: Population, design: DesignSpec, rng: np.random.Generator,
                with_index: bool = False):
    """Draw one sample from the population under the given design.

    Poisson PPS uses independent Bernoulli inclusions with weight 1/pi; an
    all-zero inclusion vector raises :class:`EmptySampleError` so the caller
    can retry (the probability is at most e^-n).  SRS designs carry the
    constant weight N/n.  With ``with_index`` the sampled population indices
    are returned too (calibration needs the sampled auxiliaries).
    """
    N = pop.N
    if design.N != N:
        raise DesignError(f"design.N={design.N} does not match population N={N}")
    n = design.n
    if design.kind == POISSON_PPS:
        pi_pop, capped = pps_inclusion_probs(pop.z, n)
        delta = rng.random(N) < pi_pop
        if not np.any(delta):
            raise EmptySampleError("Poisson-PPS draw produced an empty sample")
        sizes = effective_sizes(pi_pop, N, design.kind)
        meta = DesignMeta(design.kind, N, design.alpha, n, sizes.n_eff, sizes.n_v_eff, capped)
        idx = np.nonzero(delta)[0]
        sample = SurveySample(
            y=pop.y[idx], weight=1.0 / pi_pop[idx], pi=pi_pop[idx], design_meta=meta
        )
    elif design.kind == SRS_WR:
        idx = rng.integers(0, N, size=n)
        meta = DesignMeta(design.kind, N, design.alpha, n, float(n), float(n))
        sample = SurveySample(
            y=pop.y[idx],
            weight=np.full(n, N / n),
            pi=np.full(n, n / N),
            design_meta=meta,
        )
    else:  # SRS_WOR
        idx = rng.choice(N, size=n, replace=False)
        sizes = effective_sizes(np.full(n, n / N), N, SRS_WOR)
        meta = DesignMeta(design.kind, N, design.alpha, n, sizes.n_eff, sizes.n_v_eff)
        sample = SurveySample(
            y=pop.y[idx],
            weight=np.full(n, N / n),
            pi=np.full(n, n / N),
            design_meta=meta,
        )
    if design.weight_truncation_cap is not None:
        sample = truncate_weights(sample, design.weight_truncation_cap)
    return (sample, idx) if with_index else sample


def effective_sizes(pi, N: int, kind: str = POISSON_PPS) -> EffectiveSizes:
    """Design effective sizes N^2/sum(1/pi) and N^2/sum((1-pi)/pi).

    ``pi`` may cover the whole population (len == N) or just the realized
    sample; in the latter case the population totals are replaced by their
    Horvitz-Thompson estimates sum(1/pi_i^2) and sum((1-pi_i)/pi_i^2).
    For SRS the closed forms n and n/(1-alpha) (without replacement) or n
    (with replacement) are used directly.
    """
    pi = np.asarray(pi, dtype=float)
    if np.any(pi <= 0) or np.any(pi > 1):
        raise DesignError("inclusion probabilities must lie in (0, 1]")
    if kind == SRS_WR:
        n = pi.size if pi.size < N else int(round(np.sum(pi)))
        return EffectiveSizes(float(n), float(n))
    if kind == SRS_WOR:
        alpha = float(pi[0])
        n = pi.size if pi.size < N else int(round(alpha * N))
        if alpha >= 1.0:
            return EffectiveSizes(float(n), np.inf, census=True)
        return EffectiveSizes(float(n), n / (1.0 - alpha))
    if pi.size == N:
        inv_total = np.sum(1.0 / pi)
        var_total = np.sum((1.0 - pi) / pi)
    else:
        inv_total = np.sum(1.0 / pi**2)
        var_total = np.sum((1.0 - pi) / pi**2)
    n_eff = N * N / inv_total
    if var_total == 0.0:
        return EffectiveSizes(n_eff, np.inf, census=True)
    return EffectiveSizes(n_eff, N * N / var_total)


def kish_neff(weights) -> float:
    """Kish effective sample size (sum w)^2 / sum(w^2)."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise SvymhdeError("kish_neff: empty weight vector")
    if np.any(w <= 0):
        raise SvymhdeError("kish_neff: weights must be positive")
    return float(np.sum(w) ** 2 / np.sum(w * w))


def calibrate(sample: SurveySample, pop_cluster_totals, x, cluster) -> SurveySample:
    """Ratio-calibrate weights so weighted x totals match known cluster totals.

    Within each sampled cluster c the weights are scaled by
    known_total_c / estimated_total_c, which reproduces the benchmark totals
    exactly and is idempotent.  Original weights are retained in
    ``base_weight``.
    """
    x = np.asarray(x, dtype=float)
    cluster = np.asarray(cluster)
    if x.shape != sample.y.shape or cluster.shape != sample.y.shape:
        raise CalibrationError("x and cluster must match the sample length")
    w = sample.weight.copy()
    factors = np.ones_like(w)
    missing = []
    for c, known in pop_cluster_totals.items():
        mask = cluster == c
        if not np.any(mask):
            missing.append(c)
            continue
        est = np.sum(w[mask] * x[mask])
        if est <= 0 or known <= 0:
            raise CalibrationError(
                f"cluster {c}: non-positive total (known={known}, estimated={est})",
                clusters=[c],
            )
        factors[mask] = known / est
    if missing:
        raise CalibrationError(
            f"clusters with no sampled units: {missing}", clusters=missing
        )
    extra = set(np.unique(cluster)) - set(pop_cluster_totals)
    if extra:
        raise CalibrationError(
            f"sampled clusters without known totals: {sorted(extra)}", clusters=sorted(extra)
        )
    base = sample.base_weight if sample.base_weight is not None else sample.weight
    return replace(sample, weight=w * factors, base_weight=base)


def truncate_weights(sample: SurveySample, cap: float) -> SurveySample:
    """Cap the weights at ``cap`` componentwise, recording how many changed."""
    if cap <= 0:
        raise SvymhdeError("truncation cap must be positive")
    truncated = int(np.count_nonzero(sample.weight > cap))
    if truncated == 0:
        return sample
    base = sample.base_weight if sample.base_weight is not None else sample.weight
    return replace(
        sample,
        weight=np.minimum(sample.weight, cap),
        base_weight=base,
        truncated=sample.truncated + truncated,
    )


def read_sample_csv(path):
    """Read a survey sample from CSV.

    The file must carry a header with a ``y`` column and exactly one of
    ``weight`` or ``pi``; optional ``cluster`` and ``x`` columns are returned
    in the auxiliary dict for calibration.  Dialect: comma separated, ``.``
    decimal point, UTF-8.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: missing header row")
        cols = [c.strip() for c in reader.fieldnames]
        if "y" not in cols:
            raise SchemaError(f"{path}: required column 'y' not found (have {cols})")
        has_w = "weight" in cols
        has_pi = "pi" in cols
        if has_w == has_pi:
            raise SchemaError(
                f"{path}: need exactly one of 'weight' or 'pi' (have {cols})"
            )
        rows = {c: [] for c in cols}
        for lineno, rec in enumerate(reader, start=2):
            for c in cols:
                raw = (rec.get(c) or "").strip()
                if c in ("y", "weight", "pi", "x"):
                    try:
                        rows[c].append(float(raw))
                    except ValueError:
                        raise SchemaError(
                            f"{path}:{lineno}: cannot parse {c}={raw!r} as a number"
                        ) from None
                else:
                    rows[c].append(raw)
    if not rows["y"]:
        raise SchemaError(f"{path}: no data rows")
    y = np.array(rows["y"])
    if has_pi:
        pi = np.array(rows["pi"])
        if np.any((pi <= 0) | (pi > 1)):
            raise SchemaError(f"{path}: pi values must lie in (0, 1]")
        sample = SurveySample(y=y, weight=1.0 / pi, pi=pi)
    else:
        sample = SurveySample(y=y, weight=np.array(rows["weight"]))
    aux = {}
    if "cluster" in rows:
        aux["cluster"] = np.array(rows["cluster"])
    if "x" in rows:
        aux["x"] = np.array(rows["x"])
    return sample, aux
