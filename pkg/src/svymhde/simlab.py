"""Declarative Monte-Carlo scenarios: bias, RMSE and CI coverage studies.

A scenario is a plain config object (JSON-serializable, schema-versioned).
Replicates derive their random streams from (base_seed, N, replicate, stage)
keys, so results are byte-identical for a given config regardless of how many
worker processes execute them, and contamination draws never perturb the
sampling draws.  Failed fits are excluded and reported, never imputed.
"""

from __future__ import annotations

import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import SchemaError, SvymhdeError, EmptySampleError
from . import designs
from .designs import DesignSpec, draw_sample, simulate_population
from .families import get_family
from .kde import get_kernel
from .mhde import MhdeOptions, fit as mhde_fit
from .inference import confint, sandwich
from .robustness import ContaminationSpec, contaminate

SCHEMA_VERSION = 1

ESTIMATORS = ("mhde", "mle")

# Stage tags for stream derivation.
_STAGE_POP = 1
_STAGE_SAMPLE = 2
_STAGE_CONTAM = 3

_MAX_REDRAWS = 100


def derive_rng(base_seed: int, *key) -> np.random.Generator:
    """Deterministic stream keyed by (base_seed, *key)."""
    return np.random.default_rng([int(base_seed)] + [int(k) for k in key])


@dataclass(frozen=True)
class ScenarioConfig:
    """Declarative simulation scenario.

    ``contamination`` is an optional :class:`ContaminationSpec`;
    ``calibration`` turns on the five-cluster weight calibration against the
    auxiliary size variable.  ``full_grid`` switches ``N_grid`` to the large
    population grid.
    """

    family: str = "gamma"
    theta0: tuple = (2.0, 35_000.0)
    N_grid: tuple = (100_000, 1_000_000)
    alpha: float = 1e-3
    design: str = designs.SRS_WOR
    rho_yz: float = 0.0
    z_sigma: float = 0.6
    weight_cap: Optional[float] = None
    contamination: Optional[ContaminationSpec] = None
    calibration: bool = False
    estimators: tuple = ESTIMATORS
    replications: int = 200
    base_seed: int = 20_240_801
    ci_level: float = 0.95
    with_ci: bool = True
    kernel: str = "gaussian"
    bandwidth: Optional[float] = None
    grid_subdivisions: int = 200
    support_padding: float = 0.0
    nm_tol: float = 1e-8
    nm_max_iter: int = 2000
    restarts: int = 2
    keep_records: bool = False
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise SchemaError(
                f"unsupported schema_version {self.schema_version} (expected {SCHEMA_VERSION})"
            )
        if self.replications < 2:
            raise SchemaError("replications must be >= 2")
        if list(self.N_grid) != sorted(self.N_grid):
            raise SchemaError("N_grid must be sorted ascending")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise SchemaError(f"unknown estimators {sorted(unknown)}")
        get_family(self.family)
        get_kernel(self.kernel)
        if self.design not in designs.DESIGN_KINDS:
            raise SchemaError(f"unknown design {self.design!r}")
        if not 0.0 < self.ci_level < 1.0:
            raise SchemaError("ci_level must be in (0, 1)")

    @property
    def mhde_options(self) -> MhdeOptions:
        return MhdeOptions(
            grid_subdivisions=self.grid_subdivisions,
            support_padding=self.support_padding,
            nm_tol=self.nm_tol,
            nm_max_iter=self.nm_max_iter,
            restarts=self.restarts,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theta0"] = list(self.theta0)
        d["N_grid"] = list(self.N_grid)
        d["estimators"] = list(self.estimators)
        if self.contamination is not None:
            d["contamination"] = asdict(self.contamination)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise SchemaError("scenario config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise SchemaError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("theta0", "N_grid", "estimators"):
            if key in data:
                data[key] = tuple(data[key])
        contam = data.get("contamination")
        if contam is not None and not isinstance(contam, ContaminationSpec):
            if not isinstance(contam, dict):
                raise SchemaError("contamination: expected an object")
            bad = set(contam) - set(ContaminationSpec.__dataclass_fields__)
            if bad:
                raise SchemaError(f"contamination: unknown keys {sorted(bad)}")
            try:
                data["contamination"] = ContaminationSpec(**contam)
            except SvymhdeError as exc:
                raise SchemaError(f"contamination: {exc}") from exc
        try:
            return cls(**data)
        except TypeError as exc:
            raise SchemaError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)


@dataclass(frozen=True)
class Cell:
    """Aggregated metrics for one (N, estimator, parameter) cell."""

    rel_bias: float
    rel_rmse: float
    coverage: Optional[float]
    avg_rel_ci_width: Optional[float]
    n_ok: int
    n_fail: int
    unreliable: bool


@dataclass
class ReplicateRecord:
    N: int
    replicate: int
    estimates: dict  # estimator -> (2,) array or None
    ci_lower: Optional[np.ndarray] = None
    ci_upper: Optional[np.ndarray] = None
    failures: tuple = ()


@dataclass(frozen=True, eq=False)
class SimResult:
    config: dict
    cells: dict  # (N, estimator, param_name) -> Cell
    records: Optional[list] = field(default=None, repr=False)

    def __eq__(self, other):
        if not isinstance(other, SimResult):
            return NotImplemented
        return self.config == other.config and self.cells == other.cells

    def cell(self, N, estimator, param) -> Cell:
        return self.cells[(int(N), estimator, param)]

    def coverage_table(self):
        """Rows (N, estimator, param, coverage, avg_rel_ci_width) where CIs exist."""
        rows = []
        for (N, est, param), cell in sorted(self.cells.items()):
            if cell.coverage is not None:
                rows.append((N, est, param, cell.coverage, cell.avg_rel_ci_width))
        return rows


def _run_replicate(cfg: ScenarioConfig, N: int, r: int) -> ReplicateRecord:
    family = get_family(cfg.family)
    theta0 = np.asarray(cfg.theta0, dtype=float)
    design = DesignSpec(
        kind=cfg.design,
        N=N,
        alpha=cfg.alpha,
        rho_yz=cfg.rho_yz,
        weight_truncation_cap=cfg.weight_cap,
    )
    pop_rng = derive_rng(cfg.base_seed, N, r, _STAGE_POP)
    pop = simulate_population(
        family, theta0, N, cfg.rho_yz if cfg.design == designs.POISSON_PPS else 0.0,
        pop_rng, clusters=cfg.calibration, z_sigma=cfg.z_sigma,
    )
    sample = None
    idx = None
    for attempt in range(_MAX_REDRAWS):
        try:
            rng = derive_rng(cfg.base_seed, N, r, _STAGE_SAMPLE, attempt)
            sample, idx = draw_sample(pop, design, rng, with_index=True)
            break
        except EmptySampleError:
            continue
    if sample is None:
        return ReplicateRecord(N, r, {e: None for e in cfg.estimators},
                               failures=tuple(cfg.estimators))

    if cfg.calibration:
        totals = {
            c: float(np.sum(pop.z[pop.cluster_id == c])) for c in range(1, designs.N_CLUSTERS + 1)
        }
        sampled_clusters = pop.cluster_id[idx]
        present = {int(c): totals[int(c)] for c in np.unique(sampled_clusters)}
        sample = designs.calibrate(sample, present, pop.z[idx], sampled_clusters)

    if cfg.contamination is not None and cfg.contamination.epsilon > 0:
        crng = derive_rng(cfg.base_seed, N, r, _STAGE_CONTAM)
        sample = contaminate(sample, cfg.contamination, family, theta0, crng)

    estimates = {}
    failures = []
    ci_lo = ci_hi = None
    for est in cfg.estimators:
        try:
            if est == "mhde":
                fit = mhde_fit(
                    sample, family, cfg.mhde_options,
                    kernel=get_kernel(cfg.kernel), bandwidth=cfg.bandwidth,
                )
                estimates[est] = fit.theta_hat
                if cfg.with_ci:
                    parts = sandwich(fit, sample, family, plug_in="kde")
                    ci = confint(fit, parts, cfg.ci_level)
                    ci_lo, ci_hi = ci.lower, ci.upper
            else:
                estimates[est] = family.weighted_mle(sample.y, sample.weight)
        except SvymhdeError:
            estimates[est] = None
            failures.append(est)
    return ReplicateRecord(N, r, estimates, ci_lo, ci_hi, tuple(failures))


def _worker(args):
    cfg_dict, N, r = args
    cfg = ScenarioConfig.from_dict(cfg_dict)
    return _run_replicate(cfg, N, r)


def run_scenario(cfg: ScenarioConfig, jobs: int = 1) -> SimResult:
    """Run every replicate of the scenario and aggregate the metrics.

    Aggregation is a keyed reduction over records sorted by (N, replicate),
    so the result does not depend on worker scheduling.  A cell with more
    than 10% failed fits is flagged unreliable.
    """
    tasks = [(N, r) for N in cfg.N_grid for r in range(cfg.replications)]
    if jobs > 1:
        cfg_dict = cfg.to_dict()
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_worker, [(cfg_dict, N, r) for N, r in tasks], chunksize=8))
    else:
        records = [_run_replicate(cfg, N, r) for N, r in tasks]
    return aggregate_records(cfg, records)


def aggregate_records(cfg: ScenarioConfig, records) -> SimResult:
    """Stable keyed reduction of replicate records into metric cells."""
    records = sorted(records, key=lambda rec: (rec.N, rec.replicate))
    theta0 = np.asarray(cfg.theta0, dtype=float)
    family = get_family(cfg.family)
    cells = {}
    for N in cfg.N_grid:
        recs = [rec for rec in records if rec.N == N]
        for est in cfg.estimators:
            thetas = np.array([rec.estimates[est] for rec in recs if rec.estimates.get(est) is not None])
            n_fail = sum(1 for rec in recs if rec.estimates.get(est) is None)
            n_ok = len(recs) - n_fail
            unreliable = n_fail > 0.1 * len(recs)
            for j, pname in enumerate(family.param_names):
                if n_ok == 0:
                    cells[(int(N), est, pname)] = Cell(
                        np.nan, np.nan, None, None, 0, n_fail, True
                    )
                    continue
                dev = thetas[:, j] - theta0[j]
                rel_bias = float(np.mean(dev) / theta0[j])
                rel_rmse = float(np.sqrt(np.mean(dev**2)) / theta0[j])
                coverage = avg_width = None
                if est == "mhde" and cfg.with_ci:
                    lows, highs, widths = [], [], []
                    for rec in recs:
                        if rec.estimates.get(est) is None or rec.ci_lower is None:
                            continue
                        lows.append(rec.ci_lower[j])
                        highs.append(rec.ci_upper[j])
                        widths.append(
                            0.5 * (rec.ci_upper[j] - rec.ci_lower[j]) / abs(rec.estimates[est][j])
                        )
                    if lows:
                        lows = np.array(lows)
                        highs = np.array(highs)
                        coverage = float(np.mean((lows <= theta0[j]) & (theta0[j] <= highs)))
                        avg_width = float(np.mean(widths))
                cells[(int(N), est, pname)] = Cell(
                    rel_bias, rel_rmse, coverage, avg_width, n_ok, n_fail, unreliable
                )
    return SimResult(
        config=cfg.to_dict(),
        cells=cells,
        records=records if cfg.keep_records else None,
    )


def coverage_study(cfg: ScenarioConfig, jobs: int = 1) -> SimResult:
    """Run a CI coverage scenario (needs with_ci and R >= 1000)."""
    if not cfg.with_ci:
        raise SchemaError("coverage_study requires with_ci=true")
    if cfg.replications < 1000:
        raise SchemaError("coverage_study requires replications >= 1000")
    return run_scenario(cfg, jobs=jobs)


# -- serialization -----------------------------------------------------------

_CSV_COLUMNS = (
    "N", "estimator", "parameter", "rel_bias", "rel_rmse",
    "coverage", "avg_rel_ci_width", "n_ok", "n_fail", "unreliable",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def result_to_csv(result: SimResult) -> str:
    """Long-format CSV with the resolved config embedded in a comment line."""
    buf = io.StringIO()
    buf.write("# svymhde-simresult v%d config=%s\n" % (
        SCHEMA_VERSION, json.dumps(result.config, sort_keys=True)))
    buf.write(",".join(_CSV_COLUMNS) + "\n")
    for (N, est, param), cell in sorted(result.cells.items()):
        row = (
            N, est, param, cell.rel_bias, cell.rel_rmse, cell.coverage,
            cell.avg_rel_ci_width, cell.n_ok, cell.n_fail, cell.unreliable,
        )
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def result_from_csv(text: str) -> SimResult:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# svymhde-simresult"):
        raise SchemaError("not a svymhde result file (missing signature line)")
    config = json.loads(lines[0].split("config=", 1)[1])
    header = lines[1].split(",")
    if tuple(header) != _CSV_COLUMNS:
        raise SchemaError(f"unexpected result columns {header}")
    cells = {}
    for line in lines[2:]:
        if not line.strip():
            continue
        vals = line.split(",")
        rec = dict(zip(_CSV_COLUMNS, vals))
        key = (int(rec["N"]), rec["estimator"], rec["parameter"])
        cells[key] = Cell(
            rel_bias=float(rec["rel_bias"]) if rec["rel_bias"] else np.nan,
            rel_rmse=float(rec["rel_rmse"]) if rec["rel_rmse"] else np.nan,
            coverage=float(rec["coverage"]) if rec["coverage"] else None,
            avg_rel_ci_width=float(rec["avg_rel_ci_width"]) if rec["avg_rel_ci_width"] else None,
            n_ok=int(rec["n_ok"]),
            n_fail=int(rec["n_fail"]),
            unreliable=rec["unreliable"] == "true",
        )
    return SimResult(config=config, cells=cells)


def result_to_text(result: SimResult) -> str:
    """Aligned text table: scheme and parameter rows, coverage and width columns."""
    design = result.config.get("design", "?")
    rows = [("N", "scheme", "estimator", "parameter",
             "rel_bias", "rel_rmse", "coverage", "ci_width")]
    for (N, est, param), cell in sorted(result.cells.items()):
        rows.append((
            str(N), design, est, param,
            "n/a" if np.isnan(cell.rel_bias) else f"{100 * cell.rel_bias:+.2f}%",
            "n/a" if np.isnan(cell.rel_rmse) else f"{100 * cell.rel_rmse:.2f}%",
            "" if cell.coverage is None else f"{100 * cell.coverage:.1f}%",
            "" if cell.avg_rel_ci_width is None else f"{100 * cell.avg_rel_ci_width:.1f}%",
        ))
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    out = []
    for i, row in enumerate(rows):
        out.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
        if i == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"


def emit_tables(result: SimResult, path_prefix) -> list:
    """Write `<prefix>.csv` and `<prefix>.txt`; returns the written paths."""
    paths = []
    csv_path = f"{path_prefix}.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(result_to_csv(result))
    paths.append(csv_path)
    txt_path = f"{path_prefix}.txt"
    with open(txt_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(result_to_text(result))
    paths.append(txt_path)
    return paths
