import math

import numpy as np
import pytest
from pydantic import ValidationError

from peak_heights.cosine import (
    CosineSpec,
    cosine_field_eval,
    cosine_field_hessian,
    cosine_hessian_identity_check,
    cosine_tail_function,
    peak_tail_cosine,
    peak_tail_cosine_mc,
    peak_tail_cosine_quad,
)
from peak_heights.exceptions import InvalidParameterError
from peak_heights.numerics import integrate_1d, normal_stream


@pytest.mark.parametrize('u', [0.0, 0.5, 1.0, 2.0, 3.0])
def test_quad_single_harmonic_closed_form(u, quad):
    assert peak_tail_cosine_quad(1, u, quad) == pytest.approx(math.exp(-0.5 * u * u), abs=1e-8)


def test_quad_example(quad):
    assert peak_tail_cosine_quad(1, 1.0, quad) == pytest.approx(0.6065307, abs=1e-7)


@pytest.mark.parametrize('n_dim', [1, 2, 3, 4])
def test_quad_is_one_at_zero(n_dim, quad):
    assert peak_tail_cosine_quad(n_dim, 0.0, quad) == 1.0
    assert peak_tail_cosine_quad(n_dim, -1.0, quad) == 1.0


def test_two_rayleigh_closed_form(quad):
    # G_2(s) by direct convolution of two Rayleigh laws
    s = 2.0 * math.sqrt(2.0)

    def integrand(r):
        return r * np.exp(-0.5 * r * r) * np.exp(-0.5 * (s - r) ** 2)

    direct = math.exp(-0.5 * s * s) + integrate_1d(integrand, 0.0, s, quad)
    assert peak_tail_cosine_quad(2, 2.0, quad) == pytest.approx(direct, abs=1e-10)


def test_quad_is_monotone(quad):
    values = [peak_tail_cosine_quad(3, u, quad) for u in np.linspace(0.0, 3.0, 7)]
    assert np.all(np.diff(values) < 0.0)


def test_quad_dimension_limit(quad):
    with pytest.raises(InvalidParameterError, match=r'peak_tail_cosine\(n_dim, u\)'):
        peak_tail_cosine_quad(5, 1.0, quad)
    with pytest.raises(InvalidParameterError, match=r'peak_tail_cosine\(n_dim, u\)'):
        cosine_tail_function(5, quad)
    with pytest.raises(InvalidParameterError):
        peak_tail_cosine_quad(0, 1.0, quad)


def test_tail_function_is_vectorized(quad):
    tail = cosine_tail_function(2, quad)
    u = np.array([-0.5, 0.0, 0.7, 1.4])
    expected = [peak_tail_cosine_quad(2, float(v), quad) for v in u]
    np.testing.assert_allclose(tail(u), expected, rtol=0.0, atol=1e-12)


def test_mc_single_harmonic(stream):
    est = peak_tail_cosine_mc(1, 1.0, 1_000_000, stream)
    assert est.n_samples == 1_000_000
    assert est.agrees_with(math.exp(-0.5), n_sigma=4.0)


def test_mc_normalization_three_dims(stream):
    assert peak_tail_cosine_mc(3, 0.0, 1_000_000, stream).agrees_with(1.0, n_sigma=4.0)


@pytest.mark.parametrize('n_dim', [6, 10])
def test_mc_normalization_high_dims(n_dim, stream):
    assert peak_tail_cosine_mc(n_dim, 0.0, 400_000, stream.spawn(n_dim)).agrees_with(1.0, n_sigma=4.0)


@pytest.mark.parametrize(('n_dim', 'u'), [(2, 1.0), (2, 2.0), (3, 1.0), (4, 0.5)])
def test_mc_matches_quadrature(n_dim, u, stream, quad):
    est = peak_tail_cosine_mc(n_dim, u, 400_000, stream.spawn(10 * n_dim))
    assert est.agrees_with(peak_tail_cosine_quad(n_dim, u, quad), n_sigma=4.0)


def test_mc_negative_threshold_is_exact(stream):
    est = peak_tail_cosine_mc(6, -0.1, 20_000, stream)
    assert est.value == 1.0
    assert est.stderr == 0.0


def test_mc_minimum_samples(stream):
    with pytest.raises(InvalidParameterError, match='n_samples'):
        peak_tail_cosine_mc(2, 1.0, 9_999, stream)


def test_mc_is_reproducible_across_workers():
    a = peak_tail_cosine_mc(3, 0.5, 50_000, normal_stream(9), workers=1)
    b = peak_tail_cosine_mc(3, 0.5, 50_000, normal_stream(9), workers=4)
    assert a == b


def test_dispatch(stream, quad):
    quad_est = peak_tail_cosine(2, 1.0, cfg=quad)
    assert quad_est.stderr == 0.0
    assert quad_est.value == peak_tail_cosine_quad(2, 1.0, quad)

    mc_est = peak_tail_cosine(5, 0.0, n_samples=50_000, stream=stream)
    assert mc_est.stderr > 0.0
    assert mc_est.agrees_with(1.0, n_sigma=4.0)

    forced = peak_tail_cosine(2, 1.0, method='mc', n_samples=50_000, stream=stream)
    assert forced.stderr > 0.0


def test_dispatch_rejects_unknown_method():
    with pytest.raises(InvalidParameterError, match='method'):
        peak_tail_cosine(2, 1.0, method='simpson')


def test_spec_validation():
    with pytest.raises(ValidationError, match='expected 2 frequencies'):
        CosineSpec(n_dim=2, omegas=(1.0,))
    with pytest.raises(ValidationError, match='omega_k > 0'):
        CosineSpec(n_dim=1, omegas=(0.0,))
    assert CosineSpec.unit(3).omegas == (1.0, 1.0, 1.0)


def test_field_eval_basics():
    spec = CosineSpec.unit(1)
    assert cosine_field_eval(spec, np.array([1.0, 0.0]), 0.0) == pytest.approx(1.0)
    assert cosine_field_eval(spec, np.zeros(2), 1.3) == 0.0

    spec2 = CosineSpec(n_dim=2, omegas=(1.0, 2.5))
    points = np.random.default_rng(0).uniform(-5, 5, size=(6, 2))
    np.testing.assert_array_equal(cosine_field_eval(spec2, np.zeros(4), points), np.zeros(6))


def test_field_eval_rejects_bad_shapes():
    spec = CosineSpec.unit(2)
    with pytest.raises(InvalidParameterError, match='coefficients'):
        cosine_field_eval(spec, np.zeros(3), np.zeros(2))
    with pytest.raises(InvalidParameterError, match='coordinates'):
        cosine_field_eval(spec, np.zeros(4), np.zeros(3))


def test_field_has_unit_variance(stream):
    spec = CosineSpec(n_dim=2, omegas=(1.0, 2.5))
    t = np.array([0.4, -1.1])
    # the field is linear in the coefficients
    basis = np.array([cosine_field_eval(spec, e, t) for e in np.eye(4)])
    values = stream.standard_normal((100_000, 4)) @ basis
    assert values.var() == pytest.approx(1.0, abs=0.02)


def test_hessian_identity(stream):
    spec = CosineSpec(n_dim=3, omegas=(1.0, 2.5, 0.7))
    zeta = stream.standard_normal(6)
    points = stream.spawn(1).standard_normal((10, 3)) * 4.0

    hessian = cosine_field_hessian(spec, zeta, points)
    assert hessian.shape == (10, 3, 3)
    assert cosine_hessian_identity_check(spec, zeta, points)


def test_single_harmonic_hessian(stream):
    spec = CosineSpec(n_dim=1, omegas=(2.0,))
    zeta = stream.standard_normal(2)
    t = np.linspace(-3.0, 3.0, 13)

    hessian = cosine_field_hessian(spec, zeta, t)
    assert hessian.shape == (13, 1, 1)
    np.testing.assert_allclose(hessian[:, 0, 0], -4.0 * cosine_field_eval(spec, zeta, t), atol=1e-12)
