"""Minimum Hellinger distance estimation for complex survey designs.

A library and CLI for fitting parametric superpopulation models (gamma,
weibull, lognormal) to survey samples with unequal inclusion probabilities:
a Horvitz-Thompson adjusted kernel density estimate is matched to the
parametric family by maximizing the Hellinger affinity on a fixed
Gauss-Kronrod grid.  Includes sandwich-form asymptotic inference,
influence-function robustness diagnostics, and a reproducible Monte-Carlo
simulation lab.
"""

__version__ = "0.1.0"

from .errors import (
    CalibrationError,
    ConvergenceError,
    DegenerateCurvatureError,
    DegenerateSampleError,
    DesignError,
    EmptySampleError,
    InstabilityError,
    ParameterDomainError,
    SchemaError,
    SupportError,
    SvymhdeError,
)
from .families import GAMMA, LOGNORMAL, WEIBULL, Family, get_family
from .designs import (
    DesignSpec,
    Population,
    SurveySample,
    calibrate,
    draw_sample,
    effective_sizes,
    kish_neff,
    read_sample_csv,
    simulate_population,
    truncate_weights,
)
from .quadrature import QuadGrid, build_grid, build_refined_grid, integrate
from .kde import (
    EPANECHNIKOV,
    GAUSSIAN,
    HtKde,
    Kernel,
    bandwidth_default,
    fit_kde,
    fitting_bandwidth,
    l1_distance,
)
from .mhde import MhdeFit, MhdeOptions, affinity, fit, fit_density, hellinger_sq, uniform_affinity_gap
from .inference import (
    ConfInterval,
    SandwichParts,
    confint,
    fisher_information,
    population_stats,
    sandwich,
)
from .robustness import (
    ContaminationSpec,
    alpha_curve,
    analytic_influence,
    contaminate,
    empirical_influence,
)
from .simlab import ScenarioConfig, SimResult, coverage_study, emit_tables, run_scenario

__all__ = [name for name in dir() if not name.startswith("_")]
