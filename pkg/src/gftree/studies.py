"""Numerical studies: error ladders, convergence slopes, confidence bands,
and ingestion of experimental lineage data.

A study draws M independent genealogies per target size, estimates the
division rate on each, and scores the conditioned relative L2 error against
the true rate.  Replicate seeds are hash-derived from (run seed, size,
replicate index), so results are identical for any worker count.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .curves import CurveOnGrid, write_curve_tsv
from .estimator import (DivisionRateEstimate, EstimatorConfig,
                        ObservationSet, estimate_division_rate,
                        estimate_division_rate_pooled, kernel_density)
from .model import DivisionRate, ModelSpec
from .streams import run_key
from .trees import extract_observations, simulate_full_tree, simulate_sparse_lineage


class EmptyConditioningSet(RuntimeError):
    """No grid point passes the conditioning threshold."""


class SchemaError(ValueError):
    """The lineage CSV is missing required columns."""


class EmptyAfterFiltering(RuntimeError):
    """Validation rejected every row of the lineage CSV."""


# ---------------------------------------------------------------------------
# Error metric
# ---------------------------------------------------------------------------

def relative_error(estimate: CurveOnGrid, truth: DivisionRate,
                   raw_denominator: np.ndarray, threshold_value: float) -> float:
    """Conditioned relative L2 error of the estimated curve.

    Grid points enter only where the raw (unclipped) denominator exceeds the
    threshold; the error is |est - B| / |B| in the discrete L2 norm over
    those points.
    """
    raw = np.asarray(raw_denominator, dtype=np.float64)
    if raw.shape != estimate.values.shape:
        raise ValueError("denominator and curve grids are not aligned")
    mask = raw > threshold_value
    if not np.any(mask):
        raise EmptyConditioningSet(
            f"no grid point has denominator above {threshold_value}")
    y = estimate.x[mask]
    diff = estimate.values[mask] - np.asarray(truth(y))
    return float(np.sqrt(np.sum(diff ** 2) / np.sum(np.asarray(truth(y)) ** 2)))


def estimate_error(est: DivisionRateEstimate, truth: DivisionRate,
                   conditioning: Optional[float] = None) -> float:
    """Relative error of a full estimate; the conditioning threshold
    defaults to 1/log(n)."""
    cond = conditioning if conditioning is not None else 1.0 / math.log(est.n)
    return relative_error(est.curve, truth, est.raw_denominator, cond)


# ---------------------------------------------------------------------------
# Convergence study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorSummary:
    """Replicate errors at one target size."""

    n: int
    per_replicate: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "per_replicate",
                           np.asarray(self.per_replicate, dtype=np.float64))
        if self.per_replicate.size < 1:
            raise ValueError("need at least one replicate")

    @property
    def replicates(self) -> int:
        return self.per_replicate.size

    @property
    def mean_error(self) -> float:
        return float(np.mean(self.per_replicate))

    @property
    def std_dev(self) -> float:
        # population form: sqrt(M^-1 sum (e_i - mean)^2)
        return float(np.sqrt(np.mean(
            (self.per_replicate - self.mean_error) ** 2)))

    @property
    def median_error(self) -> float:
        return float(np.median(self.per_replicate))


@dataclass(frozen=True)
class ConvergenceStudy:
    """Error summaries over a ladder of sizes plus the log-log slope."""

    scheme: str
    rows: tuple[ErrorSummary, ...]
    slope: float
    slope_stderr: float

    def sizes(self) -> list[int]:
        return [row.n for row in self.rows]

    def mean_errors(self) -> list[float]:
        return [row.mean_error for row in self.rows]


def _replicate_error(spec: ModelSpec, scheme: str, log2_size: int,
                     config: EstimatorConfig, seed: int, replicate: int,
                     conditioning: Optional[float]) -> float:
    rep_seed = int(run_key(seed, log2_size, replicate)[0])
    n_target = 2 ** log2_size
    if scheme == "full":
        tree = simulate_full_tree(spec, max(log2_size - 1, 0), rep_seed)
    else:
        tree = simulate_sparse_lineage(spec, n_target, rep_seed)
    obs = extract_observations(tree)
    est = estimate_division_rate(obs, config)
    return estimate_error(est, spec.division_rate, conditioning)


def _replicate_error_star(args):
    return _replicate_error(*args)


def run_convergence_study(spec: ModelSpec, sizes_log2: Sequence[int],
                          replicates: int, scheme: str = "full",
                          config: EstimatorConfig = EstimatorConfig(),
                          seed: int = 0, workers: int = 1,
                          conditioning: Optional[float] = None
                          ) -> ConvergenceStudy:
    """M replicate simulate+estimate runs per size; least-squares slope of
    log mean-error against log size.

    The full scheme simulates k-1 generations for target size 2^k (2^k - 1
    records); the sparse scheme follows a lineage of exactly 2^k cells.
    All estimator rules evaluate at the actual record count.
    """
    if scheme not in ("full", "sparse"):
        raise ValueError("scheme must be 'full' or 'sparse'")
    sizes_log2 = sorted(sizes_log2)
    if not sizes_log2:
        raise ValueError("need at least one size")
    jobs = [(spec, scheme, k, config, seed, i, conditioning)
            for k in sizes_log2 for i in range(replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            flat = list(pool.map(_replicate_error_star, jobs, chunksize=8))
    else:
        flat = [_replicate_error_star(j) for j in jobs]
    rows = []
    for j, k in enumerate(sizes_log2):
        errs = np.array(flat[j * replicates:(j + 1) * replicates])
        rows.append(ErrorSummary(n=2 ** k, per_replicate=errs))
    slope, stderr = _loglog_slope(np.array([r.n for r in rows], dtype=float),
                                  np.array([r.mean_error for r in rows]))
    return ConvergenceStudy(scheme, tuple(rows), slope, stderr)


def _loglog_slope(n: np.ndarray, err: np.ndarray) -> tuple[float, float]:
    if n.size < 2:
        return math.nan, math.nan
    lx, ly = np.log(n), np.log(err)
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    dof = n.size - 2
    if dof > 0 and res.size:
        s2 = float(res[0]) / dof
        sx = float(np.sum((lx - lx.mean()) ** 2))
        return float(coef[0]), math.sqrt(s2 / sx)
    return float(coef[0]), math.nan


# ---------------------------------------------------------------------------
# Confidence band
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfidenceBand:
    """Pointwise empirical quantile envelope of replicate estimates."""

    y: np.ndarray
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    level: float
    replicates: int


def _replicate_curve(spec: ModelSpec, log2_size: int, config: EstimatorConfig,
                     seed: int, replicate: int) -> np.ndarray:
    rep_seed = int(run_key(seed, log2_size, replicate)[0])
    tree = simulate_full_tree(spec, max(log2_size - 1, 0), rep_seed)
    est = estimate_division_rate(extract_observations(tree), config)
    return est.values


def _replicate_curve_star(args):
    return _replicate_curve(*args)


def confidence_band(spec: ModelSpec, log2_size: int, replicates: int,
                    config: EstimatorConfig = EstimatorConfig(),
                    level: float = 95.0, seed: int = 0,
                    workers: int = 1) -> ConfidenceBand:
    """Pointwise empirical (100-level)/2 and (100+level)/2 percent quantiles
    of the estimate across replicates (level 100 gives the min/max envelope)."""
    if replicates < 20:
        raise ValueError("need at least 20 replicates for a band")
    if not (0 < level <= 100):
        raise ValueError("level must lie in (0, 100]")
    jobs = [(spec, log2_size, config, seed, i) for i in range(replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            curves = np.array(list(pool.map(_replicate_curve_star, jobs,
                                            chunksize=8)))
    else:
        curves = np.array([_replicate_curve_star(j) for j in jobs])
    n_records = 2 ** log2_size - 1
    dx, m = config.grid.resolve(n_records)
    from .estimator import evaluation_grid
    y = evaluation_grid(dx, m)
    tail = (100.0 - level) / 200.0
    return ConfidenceBand(
        y=y,
        lower=np.quantile(curves, tail, axis=0),
        median=np.quantile(curves, 0.5, axis=0),
        upper=np.quantile(curves, 1.0 - tail, axis=0),
        level=level, replicates=replicates)


# ---------------------------------------------------------------------------
# Variability ablation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationResult:
    """Per-replicate upper-grid errors of the variability-aware estimator
    versus the pooled-rate control."""

    aware_errors: np.ndarray
    pooled_errors: np.ndarray

    @property
    def replicates(self) -> int:
        return self.aware_errors.size

    @property
    def pooled_worse_fraction(self) -> float:
        return float(np.mean(self.pooled_errors > self.aware_errors))


def variability_ablation(spec: ModelSpec, log2_size: int, replicates: int,
                         seed: int = 0, workers: int = 1) -> AblationResult:
    """Compare aware and pooled estimates on the upper third of the grid.

    Uses the inverse-sqrt threshold (the configuration that exposes the
    sparse-density region) and conditions both errors on the aware
    estimator's raw denominator exceeding the floor.
    """
    from .estimator import InvSqrtThreshold

    config = EstimatorConfig(threshold_rule=InvSqrtThreshold())
    jobs = [(spec, log2_size, config, seed, i) for i in range(replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(_ablation_pair_star, jobs, chunksize=2))
    else:
        pairs = [_ablation_pair_star(j) for j in jobs]
    aware, pooled = np.array(pairs).T
    return AblationResult(aware, pooled)


def _ablation_pair(spec: ModelSpec, log2_size: int, config: EstimatorConfig,
                   seed: int, replicate: int) -> tuple[float, float]:
    rep_seed = int(run_key(seed, log2_size, replicate)[0])
    tree = simulate_full_tree(spec, max(log2_size - 1, 0), rep_seed)
    obs = extract_observations(tree)
    aware = estimate_division_rate(obs, config)
    pooled = estimate_division_rate_pooled(obs, config)
    m = len(aware.curve)
    mask = ((aware.raw_denominator > aware.threshold_value)
            & (np.arange(m) >= (2 * m) // 3))
    if not np.any(mask):
        raise EmptyConditioningSet("upper grid third carries no mass")
    y = aware.y[mask]
    truth = np.asarray(spec.division_rate(y))
    scale = np.sum(truth ** 2)
    ea = float(np.sqrt(np.sum((aware.values[mask] - truth) ** 2) / scale))
    ep = float(np.sqrt(np.sum((pooled.values[mask] - truth) ** 2) / scale))
    return ea, ep


def _ablation_pair_star(args):
    return _ablation_pair(*args)


# ---------------------------------------------------------------------------
# Experimental lineage ingestion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IngestReport:
    """What happened to each input row."""

    accepted: int
    rejected: list[tuple[int, str]]
    dropped_boundary: int
    lineages: int

    def to_json_dict(self):
        return {
            "accepted": self.accepted,
            "rejected": [{"line": ln, "reason": why}
                         for ln, why in self.rejected],
            "dropped_boundary": self.dropped_boundary,
            "lineages": self.lineages,
        }


DEFAULT_COLUMN_MAP = {
    "size_birth": "size_birth",
    "growth_rate": "growth_rate",
    "lifetime": "lifetime",
}


def ingest_lineage_csv(path, column_map: Optional[dict] = None,
                       lineage_column: Optional[str] = "lineage_id",
                       drop_first: int = 0, drop_last: int = 0
                       ) -> tuple[ObservationSet, IngestReport]:
    """Read per-cell lineage records from CSV with validation.

    ``column_map`` maps observation fields to CSV column names.  Rows with
    non-finite or non-positive entries are rejected with line-numbered
    diagnostics.  When a lineage column is present, the first ``drop_first``
    and last ``drop_last`` cells of every lineage are discarded (defence
    against non-stationary boundary generations in experimental data).

    Growth rates are taken as given per cell; no re-fit from size time
    series happens here.  Data sets that instead derive each rate from the
    parent-child division relation cannot supply one for the last observed
    generation of a lineage, which is what ``drop_last`` is for.
    """
    colmap = dict(DEFAULT_COLUMN_MAP)
    if column_map:
        colmap.update(column_map)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError("empty file")
        missing = [c for c in colmap.values() if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"missing columns: {missing}")
        has_lineage = (lineage_column is not None
                       and lineage_column in reader.fieldnames)
        rows = []
        rejected = []
        for line_no, row in enumerate(reader, start=2):
            vals = {}
            reason = None
            for fld, col in colmap.items():
                try:
                    v = float(row[col])
                except (TypeError, ValueError):
                    reason = f"{col}: not a number ({row[col]!r})"
                    break
                if not math.isfinite(v):
                    reason = f"{col}: not finite"
                    break
                if v <= 0:
                    reason = f"{col}: must be positive"
                    break
                vals[fld] = v
            if reason is not None:
                rejected.append((line_no, reason))
                continue
            key = row[lineage_column] if has_lineage else ""
            rows.append((key, vals["size_birth"], vals["growth_rate"],
                         vals["lifetime"]))

    by_lineage: dict[str, list] = {}
    for key, *vals in rows:
        by_lineage.setdefault(key, []).append(vals)
    kept = []
    dropped = 0
    for key in by_lineage:
        cells = by_lineage[key]
        take = cells[drop_first:len(cells) - drop_last if drop_last else None]
        dropped += len(cells) - len(take)
        kept.extend(take)
    if not kept:
        raise EmptyAfterFiltering(
            f"no usable rows ({len(rejected)} rejected, {dropped} dropped)")
    data = np.array(kept)
    obs = ObservationSet(data[:, 0], data[:, 1], data[:, 2])
    report = IngestReport(accepted=len(kept), rejected=rejected,
                          dropped_boundary=dropped,
                          lineages=len(by_lineage))
    return obs, report


# ---------------------------------------------------------------------------
# Experimental analysis (division rate + invariant density together)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentalAnalysis:
    rate_estimate: DivisionRateEstimate
    density_curve: CurveOnGrid
    report: dict


def analyze_experimental(obs: ObservationSet,
                         config: EstimatorConfig = EstimatorConfig()
                         ) -> ExperimentalAnalysis:
    """Estimate the division rate and the size-at-birth density on a shared
    grid, with run metadata; warns (softly) below 100 cells."""
    if obs.n < 100:
        warnings.warn(f"only {obs.n} cells; estimates will be noisy",
                      stacklevel=2)
    est = estimate_division_rate(obs, config)
    h = est.h
    dens = kernel_density(obs, est.y, h, config.kernel)
    report = {
        "n": obs.n,
        "h": h,
        "threshold": est.threshold_value,
        "conditioned_fraction": float(np.mean(~est.clipped)),
        "density_mass": float(np.trapezoid(dens, dx=est.curve.dx)),
    }
    return ExperimentalAnalysis(est, CurveOnGrid(float(est.y[0]),
                                                 est.curve.dx, dens), report)


# ---------------------------------------------------------------------------
# Study output files
# ---------------------------------------------------------------------------

def write_error_table(study: ConvergenceStudy, path) -> None:
    """table1-style TSV: log2 n, mean error, standard deviation."""
    write_curve_tsv(path, {
        "log2_n": np.log2(np.array(study.sizes(), dtype=float)),
        "n": np.array(study.sizes(), dtype=np.int64),
        "mean_error": np.array(study.mean_errors()),
        "std_dev": np.array([r.std_dev for r in study.rows]),
        "median_error": np.array([r.median_error for r in study.rows]),
    })


def write_error_curve(study: ConvergenceStudy, path) -> None:
    """fig2-style TSV: size versus mean error (log-log plot ready)."""
    write_curve_tsv(path, {
        "n": np.array(study.sizes(), dtype=np.int64),
        "mean_error": np.array(study.mean_errors()),
    })


def write_band(band: ConfidenceBand, path) -> None:
    """fig3-style TSV: pointwise quantile envelope."""
    write_curve_tsv(path, {
        "y": band.y, "lower": band.lower, "median": band.median,
        "upper": band.upper,
    })


def study_report_dict(full: ConvergenceStudy,
                      sparse: Optional[ConvergenceStudy],
                      config: EstimatorConfig, seed: int,
                      replicates: int) -> dict:
    def rows(study):
        return [{"log2_n": int(round(math.log2(r.n))),
                 "n": r.n, "mean_error": r.mean_error,
                 "std_dev": r.std_dev, "median_error": r.median_error,
                 "per_replicate": r.per_replicate.tolist()}
                for r in study.rows]

    doc = {
        "seed": seed,
        "replicates": replicates,
        "config": config.to_json_dict(),
        "full": {"rows": rows(full), "slope": full.slope,
                 "slope_stderr": full.slope_stderr},
    }
    if sparse is not None:
        doc["sparse"] = {"rows": rows(sparse), "slope": sparse.slope,
                         "slope_stderr": sparse.slope_stderr}
    return doc
