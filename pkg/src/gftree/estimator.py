"""Nonparametric estimation of the division rate from flat cell records.

The input is a flat set of per-cell observations (size at birth, exponential
growth rate, lifetime) with no genealogy attached.  The estimate of the
division rate at a point y is a plug-in ratio

    b_hat(y) = (y/2) * nu_hat(y/2) / max(D_raw(y), threshold)

where nu_hat is a kernel density estimate of the size-at-birth distribution
and D_raw(y) averages (1/growth_rate) over cells whose size interval
[size_birth, size_birth * e^{rate * lifetime}] covers y.  The threshold floor
keeps the ratio defined where the data carry no mass.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from numpy.polynomial import legendre
from scipy.special import erf

from . import _hot
from .curves import CurveOnGrid, write_curve_tsv


@dataclass(frozen=True)
class ObservationSet:
    """Flat per-cell records: size at birth, growth rate, lifetime."""

    size_birth: np.ndarray
    growth_rate: np.ndarray
    lifetime: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.size_birth, dtype=np.float64)
        tau = np.asarray(self.growth_rate, dtype=np.float64)
        zeta = np.asarray(self.lifetime, dtype=np.float64)
        if not (xi.shape == tau.shape == zeta.shape) or xi.ndim != 1:
            raise ValueError("columns must be 1-d arrays of equal length")
        if xi.size < 1:
            raise ValueError("need at least one observation")
        for name, col in (("size_birth", xi), ("growth_rate", tau),
                          ("lifetime", zeta)):
            if not np.all(np.isfinite(col)) or np.any(col <= 0):
                raise ValueError(f"{name} entries must be finite and positive")
        object.__setattr__(self, "size_birth", xi)
        object.__setattr__(self, "growth_rate", tau)
        object.__setattr__(self, "lifetime", zeta)

    @property
    def n(self) -> int:
        return self.size_birth.size

    def division_size(self) -> np.ndarray:
        """Size reached at division: size_birth * e^{rate * lifetime}."""
        return self.size_birth * np.exp(self.growth_rate * self.lifetime)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianKernel:
    """Standard Gaussian kernel truncated at +-radius sigma and renormalised
    to unit mass, so it has compact support.  Order 1 (vanishing first
    moment by symmetry)."""

    radius: float = 5.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def order(self) -> int:
        return 1

    @property
    def support_radius(self) -> float:
        return self.radius

    @property
    def _scale(self) -> float:
        mass = erf(self.radius / math.sqrt(2.0))
        return 1.0 / (math.sqrt(2.0 * math.pi) * mass)

    def __call__(self, z):
        z = np.asarray(z, dtype=np.float64)
        out = np.where(np.abs(z) <= self.radius,
                       np.exp(-0.5 * z * z) * self._scale, 0.0)
        return out if out.ndim else float(out)

    def to_json_dict(self):
        return {"form": "gaussian", "radius": self.radius}


@dataclass(frozen=True)
class CompactPolynomialKernel:
    """Polynomial kernel on [-1, 1] with vanishing moments 1..order.

    Built from the orthonormal Legendre system: K = sum_l p_l(0) p_l(x),
    which reproduces polynomials up to the given degree, hence integrates
    to 1 and kills moments 1..order exactly.  Signed for order >= 2.
    """

    order: int = 2
    coef: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        coef = np.zeros(self.order + 1)
        for ell in range(self.order + 1):
            basis = np.zeros(ell + 1)
            basis[ell] = math.sqrt((2 * ell + 1) / 2.0)  # orthonormal on [-1, 1]
            coef[:ell + 1] += legendre.legval(0.0, basis) * basis
        object.__setattr__(self, "coef", coef)

    @property
    def support_radius(self) -> float:
        return 1.0

    def __call__(self, z):
        z = np.asarray(z, dtype=np.float64)
        out = np.where(np.abs(z) <= 1.0, legendre.legval(z, self.coef), 0.0)
        return out if out.ndim else float(out)

    def to_json_dict(self):
        return {"form": "compact_polynomial", "order": self.order}


KernelSpec = Union[GaussianKernel, CompactPolynomialKernel]


def kernel_moment(kernel: KernelSpec, k: int, points: int = 400) -> float:
    """integral z^k K(z) dz by Gauss-Legendre quadrature on the support."""
    r = kernel.support_radius
    nodes, weights = np.polynomial.legendre.leggauss(points)
    z = nodes * r
    return float(np.sum(weights * r * (z ** k if k else 1.0) * kernel(z)))


# ---------------------------------------------------------------------------
# Bandwidth, threshold, grid rules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FixedBandwidth:
    h: float

    def evaluate(self, n: int) -> float:
        return self.h

    def to_json_dict(self):
        return {"rule": "fixed", "h": self.h}


@dataclass(frozen=True)
class PowerBandwidth:
    """h = n ** exponent (reference choice: exponent = -1/3)."""

    exponent: float = -1.0 / 3.0

    def evaluate(self, n: int) -> float:
        return float(n) ** self.exponent

    def to_json_dict(self):
        return {"rule": "power", "exponent": self.exponent}


@dataclass(frozen=True)
class SmoothnessBandwidth:
    """h = c0 * n ** (-1/(2s+1)) for smoothness s (squared-loss optimal)."""

    s: float
    c0: float = 1.0

    def evaluate(self, n: int) -> float:
        return self.c0 * float(n) ** (-1.0 / (2.0 * self.s + 1.0))

    def to_json_dict(self):
        return {"rule": "smoothness", "s": self.s, "c0": self.c0}


BandwidthRule = Union[FixedBandwidth, PowerBandwidth, SmoothnessBandwidth]


def bandwidth(rule: BandwidthRule, n: float) -> float:
    """Evaluate a bandwidth rule at sample size n (n >= 2 for the
    size-dependent rules; a fixed bandwidth works for any sample)."""
    if n < 2 and not isinstance(rule, FixedBandwidth):
        raise ValueError("size-dependent bandwidth rules need n >= 2")
    h = rule.evaluate(n)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    return h


@dataclass(frozen=True)
class InvLogThreshold:
    def evaluate(self, n: int) -> float:
        return 1.0 / math.log(n)

    def to_json_dict(self):
        return {"rule": "inv_log"}


@dataclass(frozen=True)
class InvSqrtThreshold:
    def evaluate(self, n: int) -> float:
        return float(n) ** -0.5

    def to_json_dict(self):
        return {"rule": "inv_sqrt"}


@dataclass(frozen=True)
class InvNThreshold:
    def evaluate(self, n: int) -> float:
        return 1.0 / float(n)

    def to_json_dict(self):
        return {"rule": "inv_n"}


@dataclass(frozen=True)
class FixedThreshold:
    value: float

    def evaluate(self, n: int) -> float:
        return self.value

    def to_json_dict(self):
        return {"rule": "fixed", "value": self.value}


ThresholdRule = Union[InvLogThreshold, InvSqrtThreshold, InvNThreshold,
                      FixedThreshold]


def threshold(rule: ThresholdRule, n: float) -> float:
    """Evaluate a threshold rule at sample size n (n >= 2 for the
    size-dependent rules; a fixed floor works for any sample)."""
    if n < 2 and not isinstance(rule, FixedThreshold):
        raise ValueError("size-dependent threshold rules need n >= 2")
    w = rule.evaluate(n)
    if w <= 0:
        raise ValueError("threshold must be positive")
    return w


@dataclass(frozen=True)
class GridSpec:
    """Evaluation grid dx, 2 dx, ..., up to x_max; dx defaults to n^-1/2."""

    dx: Optional[float] = None
    x_max: float = 5.0

    def resolve(self, n: int) -> tuple[float, int]:
        dx = self.dx if self.dx is not None else float(n) ** -0.5
        if dx <= 0 or self.x_max <= dx:
            raise ValueError("need 0 < dx < x_max")
        return dx, int(math.floor(self.x_max / dx + 1e-9))


@dataclass(frozen=True)
class EstimatorConfig:
    kernel: KernelSpec = GaussianKernel()
    bandwidth_rule: BandwidthRule = PowerBandwidth()
    threshold_rule: ThresholdRule = InvLogThreshold()
    grid: GridSpec = GridSpec()

    def to_json_dict(self):
        return {
            "kernel": self.kernel.to_json_dict(),
            "bandwidth": self.bandwidth_rule.to_json_dict(),
            "threshold": self.threshold_rule.to_json_dict(),
            "grid": {"dx": self.grid.dx, "x_max": self.grid.x_max},
        }


# ---------------------------------------------------------------------------
# Core estimator pieces
# ---------------------------------------------------------------------------

def _kernel_sums(sizes: np.ndarray, centers: np.ndarray, h: float,
                 kernel: KernelSpec) -> np.ndarray:
    """sum_i K((xi_i - c)/h) for each center c (unnormalised)."""
    order = np.argsort(sizes, kind="stable")
    s = np.ascontiguousarray(sizes[order])
    centers = np.ascontiguousarray(np.atleast_1d(np.asarray(centers, dtype=np.float64)))
    if isinstance(kernel, GaussianKernel):
        return _hot.kernel_sums(s, centers, h, kernel.radius, kernel._scale)
    r = kernel.support_radius
    lo = np.searchsorted(s, centers - r * h, side="left")
    hi = np.searchsorted(s, centers + r * h, side="right")
    out = np.zeros(centers.size)
    for j in range(centers.size):
        if hi[j] > lo[j]:
            out[j] = float(np.sum(kernel((s[lo[j]:hi[j]] - centers[j]) / h)))
    return out


def kernel_density(obs: ObservationSet, y, h: float,
                   kernel: KernelSpec = GaussianKernel()):
    """n^-1 sum_i K_h(size_i - y) with K_h(z) = K(z/h)/h, clipped at 0.

    A signed higher-order kernel can produce small negative values; those are
    clipped (the full estimator records how often).
    """
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    scalar = np.ndim(y) == 0
    vals = _kernel_sums(obs.size_birth, np.atleast_1d(y), h, kernel)
    out = np.maximum(vals / (obs.n * h), 0.0)
    return float(out[0]) if scalar else out


def _coverage_sums(sizes: np.ndarray, y: np.ndarray,
                   weight: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """sum_i w_i 1{sizes_i <= y <= upper_i} per query point.

    Ties (sibling cells share a birth size) are ordered by weight so the
    summation order, hence the result, is independent of row order.
    """
    lo_order = np.lexsort((weight, sizes))
    lo_sorted = sizes[lo_order]
    lo_cum = np.concatenate([[0.0], np.cumsum(weight[lo_order])])
    hi_order = np.lexsort((weight, upper))
    hi_sorted = upper[hi_order]
    hi_cum = np.concatenate([[0.0], np.cumsum(weight[hi_order])])
    started = lo_cum[np.searchsorted(lo_sorted, y, side="right")]
    ended = hi_cum[np.searchsorted(hi_sorted, y, side="left")]
    return started - ended


def coverage_denominator(obs: ObservationSet, y, floor: Optional[float] = None):
    """D(y) = n^-1 sum_i (1/rate_i) 1{size_i <= y <= division_size_i},
    floored at ``floor`` when given."""
    if floor is not None and floor <= 0:
        raise ValueError("floor must be positive")
    scalar = np.ndim(y) == 0
    yq = np.atleast_1d(np.asarray(y, dtype=np.float64))
    raw = _coverage_sums(obs.size_birth, yq, 1.0 / obs.growth_rate,
                         obs.division_size()) / obs.n
    out = raw if floor is None else np.maximum(raw, floor)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class DivisionRateEstimate:
    """Estimated division-rate curve plus per-point diagnostics."""

    curve: CurveOnGrid
    nu_values: np.ndarray
    raw_denominator: np.ndarray
    clipped: np.ndarray
    h: float
    threshold_value: float
    n: int
    negative_density_points: int
    pooled: bool = False

    @property
    def y(self) -> np.ndarray:
        return self.curve.x

    @property
    def values(self) -> np.ndarray:
        return self.curve.values

    def report_dict(self):
        return {
            "n": self.n,
            "h": self.h,
            "threshold": self.threshold_value,
            "pooled": self.pooled,
            "grid": {"x0": self.curve.x0, "dx": self.curve.dx,
                     "points": len(self.curve)},
            "clipped_points": int(np.sum(self.clipped)),
            "negative_density_points": self.negative_density_points,
            "conditioned_fraction": float(np.mean(~self.clipped)),
        }


def evaluation_grid(dx: float, m: int) -> np.ndarray:
    """The canonical grid dx, 2 dx, ..., m dx (built exactly like
    CurveOnGrid.x so curves and their grids match bit for bit)."""
    return dx + dx * np.arange(m)


def _assemble(y: np.ndarray, dx: float, obs: ObservationSet, h: float,
              floor: float, kernel: KernelSpec, raw_den: np.ndarray,
              pooled: bool) -> DivisionRateEstimate:
    dens_raw = _kernel_sums(obs.size_birth, y / 2.0, h, kernel) / (obs.n * h)
    negative = int(np.sum(dens_raw < 0))
    dens = np.maximum(dens_raw, 0.0)
    den = np.maximum(raw_den, floor)
    values = 0.5 * y * dens / den
    return DivisionRateEstimate(
        curve=CurveOnGrid(float(y[0]), dx, values), nu_values=dens,
        raw_denominator=raw_den, clipped=raw_den < floor, h=h,
        threshold_value=floor, n=obs.n, negative_density_points=negative,
        pooled=pooled)


def estimate_division_rate(obs: ObservationSet,
                           config: EstimatorConfig = EstimatorConfig()
                           ) -> DivisionRateEstimate:
    """Variability-aware estimate: each cell keeps its own growth rate."""
    n = obs.n
    h = bandwidth(config.bandwidth_rule, n)
    floor = threshold(config.threshold_rule, n)
    dx, m = config.grid.resolve(n)
    y = evaluation_grid(dx, m)
    raw = _coverage_sums(obs.size_birth, y, 1.0 / obs.growth_rate,
                         obs.division_size()) / n
    return _assemble(y, dx, obs, h, floor, config.kernel, raw, pooled=False)


def estimate_division_rate_pooled(obs: ObservationSet,
                                  config: EstimatorConfig = EstimatorConfig()
                                  ) -> DivisionRateEstimate:
    """Variability-ignoring control: every growth rate is replaced by the
    sample mean in the denominator indicator and weight."""
    n = obs.n
    h = bandwidth(config.bandwidth_rule, n)
    floor = threshold(config.threshold_rule, n)
    dx, m = config.grid.resolve(n)
    y = evaluation_grid(dx, m)
    tau_bar = float(np.mean(obs.growth_rate))
    upper = obs.size_birth * np.exp(tau_bar * obs.lifetime)
    raw = _coverage_sums(obs.size_birth, y, np.full(n, 1.0 / tau_bar), upper) / n
    return _assemble(y, dx, obs, h, floor, config.kernel, raw, pooled=True)


def estimate_division_rate_parent_indexed(
        obs: ObservationSet, parent_size: np.ndarray,
        parent_growth: np.ndarray, child_size: np.ndarray,
        config: EstimatorConfig = EstimatorConfig()) -> DivisionRateEstimate:
    """Cross-check variant indexing the denominator by parent records.

    Uses (1/parent_rate) 1{parent_size <= y, child_size >= y/2} over the
    given parent-child pairs (one per non-root cell), normalised by the full
    observation count.  Agrees with the self-indexed estimate up to
    boundary-generation effects.
    """
    n = obs.n
    h = bandwidth(config.bandwidth_rule, n)
    floor = threshold(config.threshold_rule, n)
    dx, m = config.grid.resolve(n)
    y = evaluation_grid(dx, m)
    parent_size = np.asarray(parent_size, dtype=np.float64)
    parent_growth = np.asarray(parent_growth, dtype=np.float64)
    child_size = np.asarray(child_size, dtype=np.float64)
    raw = _coverage_sums(parent_size, y, 1.0 / parent_growth,
                         2.0 * child_size) / n
    return _assemble(y, dx, obs, h, floor, config.kernel, raw, pooled=False)


# ---------------------------------------------------------------------------
# Output formats
# ---------------------------------------------------------------------------

def write_estimate_tsv(estimate: DivisionRateEstimate, path) -> None:
    """Plot-ready TSV: y, b_hat, nu_hat, raw_denominator, clipped."""
    write_curve_tsv(path, {
        "y": estimate.y,
        "b_hat": estimate.values,
        "nu_hat": estimate.nu_values,
        "raw_denominator": estimate.raw_denominator,
        "clipped": estimate.clipped.astype(np.int64),
    })


def write_estimate_report(estimate: DivisionRateEstimate,
                          config: EstimatorConfig, path) -> None:
    """JSON sidecar with the config echo and diagnostics."""
    doc = {"config": config.to_json_dict(), **estimate.report_dict()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
