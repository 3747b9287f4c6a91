import math

import numpy as np
import pytest

from gftree.estimator import (CompactPolynomialKernel, EstimatorConfig,
                              FixedBandwidth, FixedThreshold, GaussianKernel,
                              GridSpec, InvLogThreshold, InvNThreshold,
                              InvSqrtThreshold, ObservationSet,
                              PowerBandwidth, SmoothnessBandwidth, bandwidth,
                              coverage_denominator, estimate_division_rate,
                              estimate_division_rate_parent_indexed,
                              estimate_division_rate_pooled, kernel_density,
                              kernel_moment, threshold, write_estimate_tsv)
from gftree.trees import (extract_observations, parent_child_arrays,
                          simulate_full_tree, simulate_sparse_lineage)


def obs_of(*rows):
    data = np.array(rows, dtype=float)
    return ObservationSet(data[:, 0], data[:, 1], data[:, 2])


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

def test_gaussian_kernel_point_value():
    obs = obs_of([1.0, 1.0, 1.0])
    val = kernel_density(obs, 1.0, 0.5, GaussianKernel())
    assert val == pytest.approx(0.797885, abs=1e-5)


def test_kernel_density_outside_support_is_zero():
    obs = obs_of([1.0, 1.0, 1.0])
    assert kernel_density(obs, 1.0 + 5.1 * 0.5, 0.5, GaussianKernel()) == 0.0
    assert kernel_density(obs, 1.0 - 5.1 * 0.5, 0.5, GaussianKernel()) == 0.0


def test_kernel_density_average_invariance():
    obs = obs_of([1.0, 1.0, 1.0], [2.0, 0.5, 0.3])
    doubled = obs_of([1.0, 1.0, 1.0], [2.0, 0.5, 0.3],
                     [1.0, 1.0, 1.0], [2.0, 0.5, 0.3])
    ys = np.linspace(0.2, 3.0, 23)
    # doubling reorders the float summation, so identity holds to rounding
    assert np.allclose(kernel_density(obs, ys, 0.4),
                       kernel_density(doubled, ys, 0.4), rtol=4e-16, atol=0)


def test_kernel_moment_conditions():
    gauss = GaussianKernel()
    assert abs(kernel_moment(gauss, 0) - 1.0) < 1e-8
    assert abs(kernel_moment(gauss, 1)) < 1e-8
    for order in (1, 2, 3, 4):
        kern = CompactPolynomialKernel(order)
        assert abs(kernel_moment(kern, 0) - 1.0) < 1e-8
        for k in range(1, order + 1):
            assert abs(kernel_moment(kern, k)) < 1e-8


def test_higher_order_kernel_is_signed():
    kern = CompactPolynomialKernel(2)
    z = np.linspace(-1, 1, 201)
    assert np.any(kern(z) < 0)


# ---------------------------------------------------------------------------
# Denominator
# ---------------------------------------------------------------------------

def test_denominator_interval_hit():
    obs = obs_of([1.0, 1.0, math.log(2.0)])  # interval [1, 2]
    assert coverage_denominator(obs, 1.5, floor=0.1) == 1.0


def test_denominator_clipped_outside_interval():
    obs = obs_of([1.0, 1.0, math.log(2.0)])
    assert coverage_denominator(obs, 3.0, floor=0.1) == 0.1
    assert coverage_denominator(obs, 3.0) == 0.0


def test_denominator_floor_when_nothing_fires():
    obs = obs_of([1.0, 1.5, 0.2], [0.5, 2.0, 0.1])
    assert coverage_denominator(obs, 50.0, floor=1.0) == 1.0


def test_denominator_boundaries_inclusive():
    obs = obs_of([1.0, 1.0, math.log(2.0)])
    assert coverage_denominator(obs, 1.0) == 1.0
    assert coverage_denominator(obs, 2.0) == 1.0
    assert coverage_denominator(obs, 2.0 + 1e-12) == 0.0


# ---------------------------------------------------------------------------
# Rules
# ---------------------------------------------------------------------------

def test_bandwidth_rules():
    assert bandwidth(PowerBandwidth(-1.0 / 3.0), 1000) == pytest.approx(
        0.1, rel=1e-12)
    assert bandwidth(FixedBandwidth(0.25), 10) == 0.25
    assert bandwidth(SmoothnessBandwidth(s=1.0), 1000) == pytest.approx(
        0.1, rel=1e-12)
    with pytest.raises(ValueError):
        bandwidth(PowerBandwidth(), 1)


def test_threshold_rules():
    assert threshold(InvLogThreshold(), math.e ** 2) == pytest.approx(
        0.5, rel=1e-12)
    assert threshold(InvSqrtThreshold(), 1024) == pytest.approx(1.0 / 32.0)
    assert threshold(InvNThreshold(), 1000) == pytest.approx(1e-3)
    assert threshold(FixedThreshold(0.2), 10) == 0.2


def test_fixed_rules_allow_tiny_samples():
    obs = obs_of([1.0, 1.0, 0.5])
    config = EstimatorConfig(bandwidth_rule=FixedBandwidth(0.3),
                             threshold_rule=FixedThreshold(0.2),
                             grid=GridSpec(dx=0.1, x_max=3.0))
    est = estimate_division_rate(obs, config)
    assert est.n == 1 and len(est.curve) == 30


def test_grid_rule_matches_reference_protocol():
    dx, m = GridSpec().resolve(1024)
    assert dx == pytest.approx(0.03125)
    assert m == 160
    assert dx * m == pytest.approx(5.0)


# ---------------------------------------------------------------------------
# Full estimator
# ---------------------------------------------------------------------------

def test_estimate_pooled_identical_for_constant_rates(dirac_spec):
    tree = simulate_full_tree(dirac_spec, 9, seed=21)
    obs = extract_observations(tree)
    aware = estimate_division_rate(obs)
    pooled = estimate_division_rate_pooled(obs)
    assert np.array_equal(aware.values, pooled.values)
    assert np.array_equal(aware.raw_denominator, pooled.raw_denominator)


def test_estimate_tail_is_zero(variability_spec):
    tree = simulate_full_tree(variability_spec, 7, seed=22)
    obs = extract_observations(tree)
    est = estimate_division_rate(
        obs, EstimatorConfig(grid=GridSpec(x_max=8.0)))
    tail = est.y / 2.0 > obs.size_birth.max() + 5.0 * est.h
    assert np.any(tail)
    assert np.all(est.values[tail] == 0.0)
    assert np.all(est.clipped[tail])


def test_estimate_permutation_invariance(variability_spec):
    tree = simulate_full_tree(variability_spec, 8, seed=23)
    obs = extract_observations(tree)
    perm = np.random.default_rng(0).permutation(obs.n)
    shuffled = ObservationSet(obs.size_birth[perm], obs.growth_rate[perm],
                              obs.lifetime[perm])
    a = estimate_division_rate(obs)
    b = estimate_division_rate(shuffled)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.raw_denominator, b.raw_denominator)


def test_estimate_denominator_never_below_floor(variability_spec):
    tree = simulate_full_tree(variability_spec, 8, seed=24)
    est = estimate_division_rate(extract_observations(tree))
    denom = np.maximum(est.raw_denominator, est.threshold_value)
    assert np.all(denom >= est.threshold_value)
    # reconstruct the estimate from its parts: b = (y/2) nu / max(D, floor)
    rebuilt = 0.5 * est.y * est.nu_values / denom
    assert np.array_equal(rebuilt, est.values)


def test_signed_kernel_clipping_is_counted():
    rng = np.random.default_rng(3)
    obs = ObservationSet(rng.uniform(0.5, 2.0, 50), np.ones(50), np.ones(50))
    config = EstimatorConfig(kernel=CompactPolynomialKernel(2),
                             bandwidth_rule=FixedBandwidth(0.05),
                             threshold_rule=FixedThreshold(0.1),
                             grid=GridSpec(dx=0.01, x_max=5.0))
    est = estimate_division_rate(obs, config)
    assert est.negative_density_points > 0
    assert np.all(est.values >= 0.0)
    assert np.all(est.nu_values >= 0.0)


def test_consistency_improves_with_sample_size(dirac_spec):
    """Conditioned sup error |b_hat - B|/(1 + B) falls with n in median."""
    medians = []
    for log2n in (7, 10, 13):
        errs = []
        for rep in range(20):
            tree = simulate_full_tree(dirac_spec, log2n - 1,
                                      seed=1000 * log2n + rep)
            obs = extract_observations(tree)
            est = estimate_division_rate(obs)
            good = est.raw_denominator > 2.0 * est.threshold_value
            truth = est.y ** 2
            err = np.abs(est.values - truth) / (1.0 + truth)
            errs.append(float(err[good].max()))
        medians.append(float(np.median(errs)))
    assert medians[0] > medians[1] > medians[2]


def test_estimate_tsv_roundtrip(tmp_path, variability_spec):
    tree = simulate_full_tree(variability_spec, 7, seed=25)
    est = estimate_division_rate(extract_observations(tree))
    out = tmp_path / "est.tsv"
    write_estimate_tsv(est, out)
    header = out.read_text().splitlines()[0].split("\t")
    assert header == ["y", "b_hat", "nu_hat", "raw_denominator", "clipped"]
    data = np.loadtxt(out, skiprows=1)
    assert np.array_equal(data[:, 1], est.values)


def test_large_sample_reconstruction_is_accurate(variability_spec):
    """Reference-scale run: n = 2^17, h = n^-1/3, floor = n^-1/2; the
    conditioned relative error sits well below the small-sample levels."""
    tree = simulate_full_tree(variability_spec, 16, seed=41)
    obs = extract_observations(tree)
    est = estimate_division_rate(
        obs, EstimatorConfig(threshold_rule=InvSqrtThreshold()))
    cond = est.raw_denominator > 1.0 / math.log(obs.n)
    y = est.y[cond]
    truth = y ** 2
    err = math.sqrt(float(np.sum((est.values[cond] - truth) ** 2)
                          / np.sum(truth ** 2)))
    assert err < 0.06


# ---------------------------------------------------------------------------
# Parent-indexed cross-check
# ---------------------------------------------------------------------------

def test_parent_indexed_agrees_on_sparse_chains(dirac_spec):
    """On a lineage the two denominators differ by one boundary record, so
    the curves agree within 2/(n * floor) times the largest estimate."""
    chain = simulate_sparse_lineage(dirac_spec, 4096, seed=26)
    obs = extract_observations(chain)
    ps, pg, cs = parent_child_arrays(chain)
    self_indexed = estimate_division_rate(obs)
    parent_indexed = estimate_division_rate_parent_indexed(obs, ps, pg, cs)
    good = ((self_indexed.raw_denominator > self_indexed.threshold_value)
            & (parent_indexed.raw_denominator > self_indexed.threshold_value))
    sup = np.max(np.abs(self_indexed.values[good]
                        - parent_indexed.values[good]))
    tol = 2.0 / (obs.n * self_indexed.threshold_value) \
        * self_indexed.values[good].max()
    assert sup <= tol


def test_parent_indexed_agrees_on_full_trees(dirac_spec):
    """On full trees interior and leaf generations fluctuate independently,
    so agreement is statistical: within a few percent of the curve scale."""
    tree = simulate_full_tree(dirac_spec, 10, seed=27)
    obs = extract_observations(tree)
    ps, pg, cs = parent_child_arrays(tree)
    self_indexed = estimate_division_rate(obs)
    parent_indexed = estimate_division_rate_parent_indexed(obs, ps, pg, cs)
    good = ((self_indexed.raw_denominator > self_indexed.threshold_value)
            & (parent_indexed.raw_denominator > self_indexed.threshold_value))
    sup = np.max(np.abs(self_indexed.values[good]
                        - parent_indexed.values[good]))
    assert sup <= 0.05 * self_indexed.values[good].max()


# ---------------------------------------------------------------------------
# Observation validation
# ---------------------------------------------------------------------------

def test_observation_set_validation():
    with pytest.raises(ValueError):
        ObservationSet(np.array([1.0, -1.0]), np.ones(2), np.ones(2))
    with pytest.raises(ValueError):
        ObservationSet(np.array([1.0]), np.array([0.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        ObservationSet(np.array([np.nan]), np.array([1.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        ObservationSet(np.array([]), np.array([]), np.array([]))
