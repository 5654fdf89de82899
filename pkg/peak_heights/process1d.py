"""
Peak height distribution of smooth unit-variance nonstationary Gaussian processes
on the line. At a location t the law of a peak height depends on the process only
through the conditional correlation

    ρ(t) = Corr[X(t), X″(t) | X′(t) = 0] = −λ₁ / √(λ₂ − r²/λ₁),

and F_t(u) = Ψ(u/√(1−ρ²)) − √(2π)·ρ·φ(u)·Φ(−ρu/√(1−ρ²)).

Callers map a location to its SpectralTriple1D themselves; the evaluators only
see ρ. Stationary processes are the special case ρ = −κ/√3.
"""

import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from peak_heights.exceptions import DegenerateSpecError, InvalidParameterError
from peak_heights.numerics import (
    SQRT_2PI,
    QuadConfig,
    _cdf,
    _finite,
    _pdf,
    _tail,
    integrate_1d,
)
from peak_heights.typings import RealLike

SQRT3 = math.sqrt(3.0)
_RHO_EDGE = 1e-12
_KAPPA_SQ_SLACK = 1e-12


class SpectralTriple1D(BaseModel):
    """Second-order spectral quantities of a unit-variance process at one location."""

    model_config = ConfigDict(frozen=True)

    lambda1: float = Field(gt=0, description='Var X′(t)')
    lambda2: float = Field(gt=0, description='Var X″(t)')
    r: float = Field(0.0, description='Cov(X′(t), X″(t))')

    @model_validator(mode='after')
    def _check_positive_definite(self) -> 'SpectralTriple1D':
        if not self.delta_sq > self.lambda1**2:
            raise ValueError(
                'lambda2 - r**2/lambda1 > lambda1**2 violated '
                f'({self.delta_sq!r} <= {self.lambda1**2!r}): the joint covariance '
                "of (X, X', X'') is not positive definite",
            )
        return self

    @property
    def delta_sq(self) -> float:
        return self.lambda2 - self.r**2 / self.lambda1


class Rho1D(BaseModel):
    model_config = ConfigDict(frozen=True)

    rho: float

    @field_validator('rho')
    @classmethod
    def _check_rho(cls, v: float) -> float:
        if not -1.0 < v < 0.0:
            raise ValueError(f'conditional correlation must satisfy -1 < rho < 0, got {v}')
        return v


class StationaryKappa(BaseModel):
    model_config = ConfigDict(frozen=True)

    kappa: float

    @field_validator('kappa')
    @classmethod
    def _check_kappa(cls, v: float) -> float:
        if not v > 0.0:
            raise ValueError(f'kappa must be positive, got {v}')
        if v * v > 3.0 + _KAPPA_SQ_SLACK:
            raise ValueError(f'kappa**2 <= 3 violated for a process on the line, got kappa={v}')
        return v


def _as_rho(rho: Rho1D | float) -> float:
    value = rho.rho if isinstance(rho, Rho1D) else Rho1D(rho=rho).rho

    if abs(1.0 + value) < _RHO_EDGE:
        raise DegenerateSpecError(
            f'rho={value} is within {_RHO_EDGE} of -1: the conditional law of X given '
            'a critical point is degenerate',
        )

    return value


def _as_kappa(kappa: StationaryKappa | float) -> float:
    value = kappa.kappa if isinstance(kappa, StationaryKappa) else StationaryKappa(kappa=kappa).kappa

    if 3.0 - value * value <= _KAPPA_SQ_SLACK:
        raise DegenerateSpecError(
            f'kappa={value} sits on the bound kappa**2 = 3; the stationary formula is '
            'degenerate there (use the cosine family with N=1)',
        )

    return value


def conditional_rho(s: SpectralTriple1D) -> Rho1D:
    return Rho1D(rho=-s.lambda1 / math.sqrt(s.delta_sq))


def _tail_1d(r: float, u):
    # below zero F is 1 minus a small cdf; computed directly it is not monotone near 1
    s = math.sqrt((1.0 - r) * (1.0 + r))
    upper = _tail(u / s) - SQRT_2PI * r * _pdf(u) * _cdf(-r * u / s)
    lower = 1.0 - (_cdf(u / s) + SQRT_2PI * r * _pdf(u) * _cdf(-r * u / s))
    return np.where(u < 0.0, lower, upper)


def _density_1d(r: float, x):
    s = math.sqrt((1.0 - r) * (1.0 + r))
    return s * _pdf(x / s) - SQRT_2PI * r * x * _pdf(x) * _cdf(-r * x / s)


def peak_tail_1d(rho: Rho1D | float, u: RealLike) -> RealLike:
    return _tail_1d(_as_rho(rho), _finite(u, 'u'))[()]


def peak_density_1d(rho: Rho1D | float, x: RealLike) -> RealLike:
    return _density_1d(_as_rho(rho), _finite(x, 'x'))[()]


def peak_tail_1d_limit(u: RealLike) -> RealLike:
    """ρ → 0⁻ limit of peak_tail_1d: the unconditional tail Ψ(u)."""
    return _tail(_finite(u, 'u'))[()]


def peak_density_1d_limit(x: RealLike) -> RealLike:
    return _pdf(_finite(x, 'x'))[()]


def stationary_kappa(phi1: float, phi2: float) -> StationaryKappa:
    """κ = −φ′(0)/√φ″(0) for a stationary covariance C(t, s) = φ((t − s)²)."""
    if not phi1 < 0.0 or not phi2 > 0.0:
        raise InvalidParameterError(
            f"covariance curvature requires phi'(0) < 0 and phi''(0) > 0, got {phi1}, {phi2}",
        )

    kappa = -phi1 / math.sqrt(phi2)

    if kappa * kappa > 3.0 + _KAPPA_SQ_SLACK:
        raise InvalidParameterError(
            f'kappa={kappa:.6g} violates kappa**2 <= (N+2)/N = 3 for N = 1',
        )

    return StationaryKappa(kappa=kappa)


def stationary_kappa_from_moments(var_d1: float, var_d2: float) -> StationaryKappa:
    """Same κ from the derivative variances: κ = √3·Var[X′]/√Var[X″]."""
    if not var_d1 > 0.0 or not var_d2 > 0.0:
        raise InvalidParameterError('derivative variances must be positive')

    return stationary_kappa(-var_d1 / 2.0, var_d2 / 12.0)


def rho_from_kappa(kappa: StationaryKappa | float) -> Rho1D:
    value = kappa.kappa if isinstance(kappa, StationaryKappa) else StationaryKappa(kappa=kappa).kappa
    return Rho1D(rho=-value / SQRT3)


def peak_tail_stationary_1d(kappa: StationaryKappa | float, u: RealLike) -> RealLike:
    k = _as_kappa(kappa)
    u = _finite(u, 'u')
    s = math.sqrt(1.0 - k * k / 3.0)
    correction = SQRT_2PI * k / SQRT3 * _pdf(u) * _cdf(k * u / math.sqrt(3.0 - k * k))
    return np.where(u < 0.0, 1.0 - (_cdf(u / s) - correction), _tail(u / s) + correction)[()]


def peak_density_stationary_1d(kappa: StationaryKappa | float, x: RealLike) -> RealLike:
    k = _as_kappa(kappa)
    x = _finite(x, 'x')
    s = math.sqrt(1.0 - k * k / 3.0)
    return (
        s * _pdf(x / s)
        + SQRT_2PI * k / SQRT3 * x * _pdf(x) * _cdf(k * x / math.sqrt(3.0 - k * k))
    )[()]


def mean_peak_height_1d(rho: Rho1D | float, cfg: QuadConfig | None = None) -> float:
    r = _as_rho(rho)

    def first_moment(x: np.ndarray) -> np.ndarray:
        return x * _density_1d(r, x)

    return integrate_1d(first_moment, -math.inf, math.inf, cfg)
