import csv
import inspect
import io
import math

import numpy as np
import pytest
from pydantic import ValidationError

from peak_heights.cosine import CosineSpec
from peak_heights.exceptions import InsufficientPeaksError, InvalidParameterError, SimulationError
from peak_heights.process1d import conditional_rho
from peak_heights.validate import (
    CirculantEmbedding2D,
    CovarianceHandle1D,
    Grid1D,
    Grid2D,
    KSResult,
    PathSampler1D,
    PeakSample,
    StationaryCovariance2D,
    amplitude_mixture_1d,
    cosine_fields_on_grid,
    cosine_period_grid,
    empirical_cdf,
    find_peaks,
    is_strict_maximum,
    ks_distance,
    ks_two_sample,
    run_amplitude_mixture_1d,
    run_cosine,
    run_cosine_frequency_invariance,
    run_grid_refinement,
    run_planar,
    run_stationary_1d,
    run_warped_1d,
    separable_gaussian_2d,
    simulate_1d,
    simulate_cosine,
    simulate_stationary_2d,
    spectral_moments_1d,
    squared_exponential_1d,
    time_warped_1d,
    write_peaks_csv,
)


def test_grids():
    grid = Grid1D(origin=-1.0, step=0.5, n_points=16)
    assert grid.points[0] == -1.0
    assert grid.points[-1] == 6.5
    assert grid.locate((3,)) == (0.5,)

    with pytest.raises(ValidationError):
        Grid1D(step=0.1, n_points=15)
    with pytest.raises(ValidationError):
        Grid1D(step=0.0, n_points=100)

    grid2 = Grid2D(step=(0.1, 0.2), n_points=(16, 32))
    assert grid2.shape == (16, 32)
    assert grid2.locate((2, 5)) == pytest.approx((0.2, 1.0))
    with pytest.raises(ValidationError, match='n_points'):
        Grid2D(step=(0.1, 0.2), n_points=(16, 8))


def test_covariance_check_rejects_non_unit_variance():
    handle = CovarianceHandle1D(name='scaled', cov=lambda t, s: 2.0 * np.exp(-0.5 * (t - s) ** 2))
    with pytest.raises(InvalidParameterError, match='C\\(t, t\\) = 1'):
        handle.check(np.linspace(0, 1, 16))


def test_amplitude_mixture_has_unit_variance():
    cov = amplitude_mixture_1d()
    t = np.linspace(0.0, 40.0, 401)
    np.testing.assert_allclose(np.diag(cov.check(t)), 1.0, atol=1e-10)


def test_time_warp_must_be_monotone():
    with pytest.raises(InvalidParameterError):
        time_warped_1d(amplitude=1.0)


def test_spectral_moments_squared_exponential():
    triple = spectral_moments_1d(squared_exponential_1d(), 0.7)
    assert triple.lambda1 == pytest.approx(1.0, abs=1e-5)
    assert triple.lambda2 == pytest.approx(3.0, abs=1e-5)
    assert triple.r == pytest.approx(0.0, abs=1e-5)


@pytest.mark.parametrize('t', [0.0, 1.0, 2.0])
def test_spectral_moments_time_warp(t):
    cov = time_warped_1d()
    triple = spectral_moments_1d(cov, t)
    exact = cov.triple(t)

    assert triple.lambda1 == pytest.approx(exact.lambda1, rel=1e-5)
    assert triple.r == pytest.approx(exact.r, abs=1e-4)
    assert conditional_rho(triple).rho == pytest.approx(-1.0 / math.sqrt(3.0), abs=1e-4)


def test_spectral_moments_reject_rough_covariance():
    rough = CovarianceHandle1D(name='exponential', cov=lambda t, s: np.exp(-np.abs(t - s)))
    with pytest.raises(InvalidParameterError):
        spectral_moments_1d(rough, 0.0)


def test_path_sampler_moments(stream):
    grid = Grid1D(step=0.1, n_points=50)
    paths = PathSampler1D(squared_exponential_1d(), grid).sample(stream, 10_000)
    assert paths.shape == (10_000, 50)

    for i in (0, 20, 49):
        assert paths[:, i].var() == pytest.approx(1.0, abs=0.03)

    lag1 = np.mean(paths[:, 10] * paths[:, 11])
    assert lag1 == pytest.approx(math.exp(-0.5 * 0.01), abs=0.03)


def test_simulate_1d_shape(stream):
    paths = simulate_1d(time_warped_1d(), Grid1D(step=0.2, n_points=30), stream, n_paths=3)
    assert paths.shape == (3, 30)


def test_rank_one_covariance_rejected():
    constant = CovarianceHandle1D(name='constant', cov=lambda t, s: np.ones_like(t - s))
    with pytest.raises(SimulationError, match='rank 1'):
        PathSampler1D(constant, Grid1D(step=0.1, n_points=20))


def test_indefinite_covariance_rejected():
    bad = CovarianceHandle1D(name='indefinite', cov=lambda t, s: np.where(np.isclose(t, s), 1.0, -0.5))
    with pytest.raises(SimulationError, match='indefinite'):
        PathSampler1D(bad, Grid1D(step=0.1, n_points=16))


def test_circulant_marginal_variance(stream):
    grid = Grid2D(step=(0.25, 0.5), n_points=(64, 64))
    embedding = CirculantEmbedding2D(separable_gaussian_2d(), grid)
    fields = embedding.sample(stream, 200)

    assert embedding.padding == 2
    assert fields.shape == (200, 64, 64)
    assert np.mean(fields**2) == pytest.approx(1.0, abs=0.03)


def test_circulant_odd_field_count(stream):
    grid = Grid2D(step=(0.25, 0.5), n_points=(32, 32))
    fields = simulate_stationary_2d(separable_gaussian_2d(), grid, stream, n_fields=3)
    assert fields.shape == (3, 32, 32)
    assert not np.array_equal(fields[0], fields[1])


def test_hessian_variance_from_second_differences(stream):
    grid = Grid2D(step=(0.1, 0.2), n_points=(256, 256))
    fields = simulate_stationary_2d(separable_gaussian_2d(1.0, 2.0), grid, stream, n_fields=8)
    d11 = (fields[:, 2:, :] - 2.0 * fields[:, 1:-1, :] + fields[:, :-2, :]) / 0.1**2
    assert np.mean(d11**2) == pytest.approx(3.0, rel=0.05)


def test_dense_fallback(stream, log_messages):
    periodic = StationaryCovariance2D(name='product-cosine', cov=lambda a, b: np.cos(a) * np.cos(b))
    grid = Grid2D(step=(1.0, 1.0), n_points=(16, 16))

    with pytest.raises(SimulationError):
        simulate_stationary_2d(periodic, grid, stream, method='circulant')

    fields = simulate_stationary_2d(periodic, grid, stream, n_fields=4)
    assert fields.shape == (4, 16, 16)
    assert any('falling back to dense' in m for m in log_messages)


def test_unknown_simulation_method(stream):
    grid = Grid2D(step=(1.0, 1.0), n_points=(16, 16))
    with pytest.raises(InvalidParameterError):
        simulate_stationary_2d(separable_gaussian_2d(), grid, stream, method='spectral')


def test_cosine_simulation_variance(stream):
    spec = CosineSpec(n_dim=1, omegas=(1.7,))
    fields = simulate_cosine(spec, Grid1D(step=0.3, n_points=16), stream, n_fields=100_000)
    assert fields[:, 5].var() == pytest.approx(1.0, abs=0.02)


def test_cosine_simulation_needs_matching_grid(stream):
    with pytest.raises(InvalidParameterError):
        simulate_cosine(CosineSpec.unit(2), Grid1D(step=0.3, n_points=16), stream)


def test_no_peaks_on_a_ramp():
    grid = Grid1D(step=0.1, n_points=50)
    assert find_peaks(grid.points * 2.0, grid) == []
    assert find_peaks(np.ones(50), grid) == []


def test_single_bump():
    grid = Grid1D(step=0.1, n_points=61)
    peaks = find_peaks(np.exp(-((grid.points - 3.0) ** 2)), grid, replication=4)

    assert len(peaks) == 1
    assert peaks[0].index == (30,)
    assert peaks[0].location == pytest.approx((3.0,))
    assert peaks[0].height == pytest.approx(1.0)
    assert peaks[0].replication == 4


def test_single_bump_2d():
    grid = Grid2D(step=(0.1, 0.1), n_points=(41, 41))
    x, y = np.meshgrid(grid.axis(0), grid.axis(1), indexing='ij')
    peaks = find_peaks(np.exp(-((x - 2.0) ** 2) - 0.5 * (y - 1.0) ** 2), grid)

    assert [p.index for p in peaks] == [(20, 10)]
    assert is_strict_maximum(np.exp(-((x - 2.0) ** 2) - 0.5 * (y - 1.0) ** 2), (20, 10))


def test_diagonal_neighbors_count():
    field = np.zeros((16, 16))
    field[5, 5] = 1.0
    field[6, 6] = 2.0
    peaks = find_peaks(field, Grid2D(step=(1.0, 1.0), n_points=(16, 16)))
    assert [p.index for p in peaks] == [(6, 6)]


def test_find_peaks_shape_mismatch():
    with pytest.raises(InvalidParameterError, match='does not match'):
        find_peaks(np.zeros(20), Grid1D(step=0.1, n_points=16))


def test_cosine_peak_height_is_the_amplitude(stream):
    spec = CosineSpec.unit(1)
    grid = cosine_period_grid(spec, 628)
    zeta = stream.standard_normal((20, 2))

    for row in zeta:
        field = cosine_fields_on_grid(spec, row, grid)[0]
        peaks = find_peaks(field, grid)
        assert len(peaks) == 1
        assert peaks[0].height == pytest.approx(math.hypot(*row), abs=1e-3)


def test_empirical_cdf():
    emp = empirical_cdf([3.0, 1.0, 2.0])
    assert emp.count == 3
    np.testing.assert_array_equal(emp.heights, [1.0, 2.0, 3.0])
    assert emp.cdf(2.0) == pytest.approx(2 / 3)
    assert emp.exceedance(0.0) == 1.0

    with pytest.raises(InsufficientPeaksError):
        empirical_cdf([])


def test_ks_against_itself():
    emp = empirical_cdf(np.random.default_rng(1).normal(size=500))
    # the one-sample statistic sees the jump at each sample from the left
    assert ks_distance(emp, emp.exceedance).statistic == pytest.approx(1.0 / 500)
    assert ks_two_sample(emp, emp).statistic == 0.0


def test_ks_uniform():
    u = np.random.default_rng(2).uniform(size=10_000)
    result = ks_distance(empirical_cdf(u), lambda x: np.clip(1.0 - x, 0.0, 1.0))
    assert result.statistic < 0.025
    assert result.sufficient
    assert 0.0 <= result.pvalue <= 1.0


def test_ks_two_sample_sees_a_shift():
    rng = np.random.default_rng(3)
    a = empirical_cdf(rng.normal(size=2000))
    b = empirical_cdf(rng.normal(loc=1.0, size=3000))
    result = ks_two_sample(a, b)

    assert result.statistic == pytest.approx(0.383, abs=0.05)
    assert result.n_samples == 2000
    assert result.pvalue < 1e-6


def test_ks_small_samples_are_flagged():
    assert not KSResult(statistic=0.1, n_samples=50).sufficient


def test_write_peaks_csv():
    out = io.StringIO()
    peaks = [
        PeakSample(location=(0.1, 0.2), height=1.0 / 3.0, replication=0),
        PeakSample(location=(1.5, -2.0), height=2.0, replication=1),
    ]
    assert write_peaks_csv(peaks, out) == 2

    lines = out.getvalue().splitlines()
    assert lines[0] == 'replication,location1,location2,height'
    assert lines[1] == '0,0.10000000000000001,0.20000000000000001,0.33333333333333331'


def test_campaign_needs_enough_peaks():
    with pytest.raises(InsufficientPeaksError) as exc:
        run_stationary_1d(n_paths=2, length=5.0, step=0.05, seed=1)

    assert exc.value.exit_code == 3


def test_small_cosine_campaign():
    report = run_cosine(n_dim=1, n_draws=1000, points_per_period=100, min_peaks=300, threshold=0.1, seed=5)
    assert report.n_peaks == 1000
    assert report.passed
    assert report.details['min_height'] > 0.0


def test_cosine_campaign_exports_peaks(tmp_path, log_messages):
    path = tmp_path / 'peaks.csv'
    report = run_cosine(
        n_dim=1, n_draws=300, points_per_period=50, min_peaks=200, threshold=0.2, seed=8, peaks_csv=path,
    )

    with path.open(newline='', encoding='utf-8') as f:
        rows = list(csv.reader(f))

    assert rows[0] == ['replication', 'location1', 'height']
    assert len(rows) - 1 == report.n_peaks
    assert sorted(int(r[0]) for r in rows[1:]) == list(range(300))
    heights = [float(r[2]) for r in rows[1:]]
    assert min(heights) == pytest.approx(report.details['min_height'], rel=1e-15)
    assert all(-0.02 < float(r[1]) < 2.0 * math.pi for r in rows[1:])
    assert any(f'wrote {report.n_peaks} peak samples' in m for m in log_messages)


def test_mixture_defaults_give_every_tested_bin_enough_peaks():
    defaults = {
        name: p.default for name, p in inspect.signature(run_amplitude_mixture_1d).parameters.items()
    }
    cov = amplitude_mixture_1d()
    width = defaults['bin_width']
    edges = np.arange(0.0, defaults['length'] + 0.5 * width, width)
    tested = 0

    for lo, hi in zip(edges[:-1], edges[1:], strict=True):
        rhos = [conditional_rho(cov.triple(float(t))).rho for t in (lo, 0.5 * (lo + hi), hi)]
        if max(rhos) - min(rhos) >= defaults['max_rho_spread']:
            continue

        tested += 1
        # expected count of local maxima along a path: sqrt(delta_sq) / (2 pi sqrt(lambda1)) per unit length
        triples = [cov.triple(float(t)) for t in np.linspace(lo, hi, 21)]
        rate = np.mean([math.sqrt(s.delta_sq) / (2.0 * math.pi * math.sqrt(s.lambda1)) for s in triples])
        assert defaults['n_paths'] * rate * (hi - lo) >= 1.2 * defaults['min_peaks_per_bin']

    assert tested > 0


def test_campaigns_are_reproducible():
    kw = {'n_dim': 1, 'n_draws': 300, 'points_per_period': 50, 'min_peaks': 200, 'threshold': 0.2, 'seed': 8}
    assert run_cosine(**kw) == run_cosine(**kw, workers=3)


@pytest.mark.slow
def test_stationary_campaign_passes():
    report = run_stationary_1d()
    assert report.n_peaks >= 2000
    assert report.passed


@pytest.mark.slow
def test_stationary_campaign_negative_control():
    report = run_stationary_1d(kappa_offset=0.5)
    assert not report.passed
    assert report.ks > report.threshold


@pytest.mark.slow
def test_warped_campaign_passes():
    report = run_warped_1d()
    assert report.passed
    for rho in report.details['rho_finite_difference']:
        assert rho == pytest.approx(-1.0 / math.sqrt(3.0), abs=1e-4)


@pytest.mark.slow
def test_amplitude_mixture_campaign_passes():
    report = run_amplitude_mixture_1d()
    assert report.passed
    assert all(b['n_peaks'] >= 400 for b in report.details['bins'])


@pytest.mark.slow
def test_grid_refinement_campaign_passes():
    assert run_grid_refinement().passed


@pytest.mark.slow
def test_planar_campaign_passes():
    report = run_planar()
    assert report.n_peaks >= 1500
    assert report.passed


@pytest.mark.slow
@pytest.mark.parametrize('n_dim', [1, 2])
def test_cosine_campaign_passes(n_dim):
    report = run_cosine(n_dim=n_dim)
    assert report.n_peaks >= 3000
    assert report.passed


@pytest.mark.slow
def test_cosine_frequency_invariance_passes():
    assert run_cosine_frequency_invariance().passed
