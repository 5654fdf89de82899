"""
Peak heights of stationary planar Gaussian fields whose gradient and Hessian
satisfy the quadrant-symmetry independence conditions. After rescaling to unit
gradient covariance the law depends on the Hessian variances (σ₁², σ₂², σ₃²):

    h(x) = φ(x)·E_ρ̃[g(Z̃₁, Z̃₂, x | σ₁²−1, σ₂²−1, σ₃²)] / E_ρ[g(Z₁, Z₂, 0 | σ₁², σ₂², σ₃²)]

with ρ = σ₃²/(σ₁σ₂) and ρ̃ = (σ₃²−1)/√((σ₁²−1)(σ₂²−1)). F(u) is the integral of h
over (u, ∞).
"""

import math
from collections.abc import Callable, Sequence
from functools import lru_cache

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import special

from peak_heights.exceptions import DegenerateSpecError, InvalidParameterError
from peak_heights.numerics import (
    BivariateCorrelation,
    QuadConfig,
    _finite,
    _pdf,
    expect_bivariate,
    integrate_1d,
)
from peak_heights.typings import FloatArray, RealLike

_SQRT2 = math.sqrt(2.0)
_DENOMINATOR_FLOOR = 1e-14


class RawPlanarSpec(BaseModel):
    """Gradient and Hessian variances of a planar field before rescaling."""

    model_config = ConfigDict(frozen=True)

    gamma1_sq: float = Field(gt=0)
    gamma2_sq: float = Field(gt=0)
    sigma1_sq: float = Field(gt=0)
    sigma2_sq: float = Field(gt=0)
    sigma3_sq: float = Field(gt=0)


class PlanarSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    gamma1_sq: float = Field(1.0, gt=0)
    gamma2_sq: float = Field(1.0, gt=0)
    sigma1_sq: float
    sigma2_sq: float
    sigma3_sq: float

    @model_validator(mode='after')
    def _check_hessian(self) -> 'PlanarSpec':
        s1, s2, s3 = self.sigma1_sq, self.sigma2_sq, self.sigma3_sq

        if not (s1 > 1.0 and s2 > 1.0):
            raise ValueError(f'sigma1_sq > 1 and sigma2_sq > 1 violated: got {s1}, {s2}')
        if not s3 > 0.0:
            raise ValueError(f'sigma3_sq > 0 violated: got {s3}')
        if s3 * s3 > s1 * s2:
            raise ValueError(
                f'sigma3_sq**2 <= sigma1_sq*sigma2_sq violated: {s3 * s3} > {s1 * s2}',
            )
        if (s3 - 1.0) ** 2 > (s1 - 1.0) * (s2 - 1.0):
            raise ValueError(
                '(sigma3_sq-1)**2 <= (sigma1_sq-1)*(sigma2_sq-1) violated: '
                f'{(s3 - 1.0) ** 2} > {(s1 - 1.0) * (s2 - 1.0)}',
            )
        return self

    def swapped(self) -> 'PlanarSpec':
        return PlanarSpec(
            gamma1_sq=self.gamma2_sq,
            gamma2_sq=self.gamma1_sq,
            sigma1_sq=self.sigma2_sq,
            sigma2_sq=self.sigma1_sq,
            sigma3_sq=self.sigma3_sq,
        )


def rescale_to_unit_gradient(raw: RawPlanarSpec) -> PlanarSpec:
    """
    Spec of Z(t₁, t₂) = X(t₁/γ₁, t₂/γ₂), whose gradient covariance is the identity;
    Z has the same peak heights as X. Hessian entries scale as Z_jk = X_jk/(γ_jγ_k).
    """
    g1, g2 = raw.gamma1_sq, raw.gamma2_sq

    try:
        return PlanarSpec(
            gamma1_sq=g1,
            gamma2_sq=g2,
            sigma1_sq=raw.sigma1_sq / (g1 * g1),
            sigma2_sq=raw.sigma2_sq / (g2 * g2),
            sigma3_sq=raw.sigma3_sq / (g1 * g2),
        )
    except ValueError as e:
        raise InvalidParameterError(f'rescaled spec is invalid: {e}') from e


def isotropic_planar_spec(kappa: float) -> PlanarSpec:
    """Isotropic field with unit gradient covariance: σ₁² = σ₂² = 3/κ², σ₃² = 1/κ²."""
    if not 0.0 < kappa * kappa < 2.0:
        raise InvalidParameterError(f'isotropic planar spec needs 0 < kappa**2 < 2, got {kappa}')

    k2 = kappa * kappa
    return PlanarSpec(sigma1_sq=3.0 / k2, sigma2_sq=3.0 / k2, sigma3_sq=1.0 / k2)


def _g(z1, z2, x: float, a1_sq: float, a2_sq: float, a3_sq: float):
    a1, a2 = math.sqrt(a1_sq), math.sqrt(a2_sq)
    b = a3_sq / (a1 * a2)
    d1 = z1 - x / a1
    d2 = z2 - x / a2
    inside = (d1 < 0.0) & (d2 < 0.0)

    p = np.where(inside, d1 * d2, 0.0)
    q = np.sqrt(p / b)
    # Φ(q) − ½ through erf keeps the small-p cancellation accurate
    value = a1 * a2 * ((p - b) * 0.5 * special.erf(q / _SQRT2) + np.sqrt(b * p) * _pdf(q))
    return np.where(inside, value, 0.0)


def g_kernel(
    z1: RealLike,
    z2: RealLike,
    x: float,
    a1_sq: float,
    a2_sq: float,
    a3_sq: float,
) -> RealLike:
    if not (a1_sq > 0.0 and a2_sq > 0.0 and a3_sq > 0.0):
        raise InvalidParameterError('g kernel needs a1_sq, a2_sq, a3_sq > 0')

    return _g(_finite(z1, 'z1'), _finite(z2, 'z2'), float(x), a1_sq, a2_sq, a3_sq)[()]


def planar_correlations(spec: PlanarSpec) -> tuple[BivariateCorrelation, BivariateCorrelation]:
    """
    (ρ, ρ̃). ρ̃ uses √((σ₁²−1)(σ₂²−1)) in the denominator, the form the conditional
    covariance of the Hessian diagonal given X = x actually produces.
    """
    s1, s2, s3 = spec.sigma1_sq, spec.sigma2_sq, spec.sigma3_sq
    rho = s3 / math.sqrt(s1 * s2)
    rho_tilde = (s3 - 1.0) / math.sqrt((s1 - 1.0) * (s2 - 1.0))

    if not rho < 1.0:
        raise DegenerateSpecError(f'rho = {rho} = 1: degenerate bivariate law in the denominator')
    if not abs(rho_tilde) < 1.0:
        raise DegenerateSpecError(f'|rho_tilde| = {abs(rho_tilde)} = 1: degenerate conditional law')

    return BivariateCorrelation(rho=rho), BivariateCorrelation(rho=rho_tilde)


@lru_cache(maxsize=256)
def _denominator(spec: PlanarSpec, cfg: QuadConfig) -> float:
    rho, _ = planar_correlations(spec)
    s1, s2, s3 = spec.sigma1_sq, spec.sigma2_sq, spec.sigma3_sq

    def kernel(z1, z2):
        return _g(z1, z2, 0.0, s1, s2, s3)

    value = expect_bivariate(kernel, rho, cfg, upper=(0.0, 0.0))

    if value < _DENOMINATOR_FLOOR:
        raise DegenerateSpecError(
            f'expected |det Hessian| at critical points is {value:.3e} < {_DENOMINATOR_FLOOR}',
        )

    logger.debug(f'planar denominator for {spec!r}: {value!r}')
    return value


def _numerator(spec: PlanarSpec, x: float, cfg: QuadConfig) -> float:
    _, rho_tilde = planar_correlations(spec)
    a1_sq, a2_sq = spec.sigma1_sq - 1.0, spec.sigma2_sq - 1.0
    s3 = spec.sigma3_sq

    def kernel(z1, z2):
        return _g(z1, z2, x, a1_sq, a2_sq, s3)

    upper = (x / math.sqrt(a1_sq), x / math.sqrt(a2_sq))
    return float(_pdf(x)) * expect_bivariate(kernel, rho_tilde, cfg, upper=upper)


def _density_nodes(spec: PlanarSpec, xs: FloatArray, cfg: QuadConfig) -> FloatArray:
    den = _denominator(spec, cfg)
    xs = np.asarray(xs, dtype=float)
    num = np.array([_numerator(spec, float(x), cfg) for x in xs.ravel()])
    return (num / den).reshape(xs.shape)


def peak_density_planar(spec: PlanarSpec, x: RealLike, cfg: QuadConfig | None = None) -> RealLike:
    cfg = cfg or QuadConfig()
    return _density_nodes(spec, _finite(x, 'x'), cfg)[()]


def _tail_integral(spec: PlanarSpec, lo: float, hi: float, cfg: QuadConfig) -> float:
    def density(xs: FloatArray) -> FloatArray:
        return _density_nodes(spec, xs, cfg)

    return integrate_1d(density, lo, hi, cfg)


def peak_tail_planar(spec: PlanarSpec, u: float, cfg: QuadConfig | None = None) -> float:
    """F(u) = ∫_u^R h(x)dx with R the truncation radius; h is negligible beyond it."""
    cfg = cfg or QuadConfig()
    u = float(_finite(u, 'u'))
    radius = cfg.truncation_radius

    if u >= radius:
        return 0.0

    return _tail_integral(spec, max(u, -radius), radius, cfg)


def peak_tail_planar_table(
    spec: PlanarSpec,
    u_grid: Sequence[float],
    cfg: QuadConfig | None = None,
) -> FloatArray:
    """
    F on an increasing grid, accumulated from the right piece by piece so every
    density node is computed once.
    """
    cfg = cfg or QuadConfig()
    grid = _finite(np.asarray(u_grid, dtype=float), 'u_grid')

    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise InvalidParameterError('u_grid must be a non-empty strictly increasing vector')

    radius = cfg.truncation_radius
    clipped = np.clip(grid, -radius, radius)
    edges = np.append(clipped, radius)
    pieces = np.array(
        [
            _tail_integral(spec, lo, hi, cfg) if hi > lo else 0.0
            for lo, hi in zip(edges[:-1], edges[1:], strict=True)
        ],
    )
    return np.cumsum(pieces[::-1])[::-1]


def planar_spec_from_covariance(
    cov: Callable[[FloatArray, FloatArray], FloatArray],
    step: float = 0.05,
) -> RawPlanarSpec:
    """
    Raw spec of a stationary planar field from its covariance C(τ₁, τ₂) as a function
    of the lag: γᵢ² = −∂ᵢ²C(0), σ₁² = ∂₁⁴C(0), σ₂² = ∂₂⁴C(0), σ₃² = ∂₁²∂₂²C(0).
    Central differences with one Richardson step.
    """
    if not step > 0.0:
        raise InvalidParameterError('finite-difference step must be positive')

    def moments(h: float) -> np.ndarray:
        k = np.arange(-2, 3)
        d2 = np.array([0.0, 1.0, -2.0, 1.0, 0.0])
        d4 = np.array([1.0, -4.0, 6.0, -4.0, 1.0])
        t1, t2 = np.meshgrid(k * h, k * h, indexing='ij')
        c = np.asarray(cov(t1, t2), dtype=float)

        return np.array(
            [
                -(d2 @ c[:, 2]) / h**2,
                -(d2 @ c[2, :]) / h**2,
                (d4 @ c[:, 2]) / h**4,
                (d4 @ c[2, :]) / h**4,
                (d2 @ c @ d2) / h**4,
            ],
        )

    coarse, fine = moments(step), moments(step / 2.0)
    g1, g2, s1, s2, s3 = (4.0 * fine - coarse) / 3.0

    try:
        return RawPlanarSpec(gamma1_sq=g1, gamma2_sq=g2, sigma1_sq=s1, sigma2_sq=s2, sigma3_sq=s3)
    except ValueError as e:
        raise InvalidParameterError(f'covariance does not give a valid planar spec: {e}') from e
