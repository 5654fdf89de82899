"""
GOI(c) random matrices and peak heights of anisotropic fields
E[X(t)X(s)] = φ(‖A(t − s)‖²).

GOI(c) is the symmetric N×N Gaussian ensemble with
E[M_ij M_kl] = ½(δ_ik δ_jl + δ_il δ_jk) + c δ_ij δ_kl, nondegenerate for c > −1/N;
c = 0 is GOE. With κ = −φ′(0)/√φ″(0) the peak height law is

    F(u) = ∫_u^∞ φ(x) E_GOI((1−κ²)/2)[∏|λ_j − κx/√2| 1{λ_N < κx/√2}] dx
           / E_GOI(1/2)[∏|λ_j| 1{λ_N < 0}]

for κ² < (N+2)/N, and a ratio of two GOI(1/2) expectations on the bound. A does
not enter the value: XA has the covariance of an isotropic field.
"""

import math
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from peak_heights.exceptions import (
    InvalidParameterError,
    UnreliableEstimateError,
    WeightDegeneracyError,
)
from peak_heights.numerics import (
    EstimateWithError,
    QuadConfig,
    RandomStream,
    _finite,
    _pdf,
    _tail,
    integrate_1d,
    integrate_2d,
    map_chunks,
    normal_stream,
    split_counts,
)
from peak_heights.settings import get_settings
from peak_heights.typings import EigenFunctional, FloatArray

CRITICAL_TOL = 1e-9
NEAR_CRITICAL_GAP = 1e-3
MIN_ESS_FRACTION = 0.01
_DET_GUARD = 1e-12


class Branch(StrEnum):
    SUBCRITICAL = 'subcritical'
    CRITICAL = 'critical'


class GOICovParam(BaseModel):
    model_config = ConfigDict(frozen=True)

    c: float
    n_dim: int = Field(ge=1)

    @model_validator(mode='after')
    def _check_nondegenerate(self) -> 'GOICovParam':
        if not self.c > -1.0 / self.n_dim:
            raise ValueError(
                f'c > -1/N violated: c={self.c}, -1/N={-1.0 / self.n_dim} (degenerate GOI)',
            )
        return self


class KappaInfo(BaseModel):
    model_config = ConfigDict(frozen=True)

    kappa: float
    n_dim: int
    branch: Branch

    @property
    def bound(self) -> float:
        return (self.n_dim + 2) / self.n_dim


class AnisoSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_dim: int = Field(ge=1)
    a_matrix: tuple[tuple[float, ...], ...]
    phi1: float = Field(lt=0, description="φ′(0)")
    phi2: float = Field(gt=0, description="φ″(0)")

    @model_validator(mode='after')
    def _check_spec(self) -> 'AnisoSpec':
        a = self.matrix

        if a.shape != (self.n_dim, self.n_dim):
            raise ValueError(f'a_matrix must be {self.n_dim}x{self.n_dim}, got {a.shape}')

        scale = float(np.linalg.norm(a, 2)) ** self.n_dim
        if not abs(float(np.linalg.det(a))) > _DET_GUARD * scale:
            raise ValueError('det(a_matrix) != 0 violated: A is numerically singular')

        # raises for κ² > (N+2)/N
        kappa_from_phi(self.phi1, self.phi2, self.n_dim)
        return self

    @property
    def matrix(self) -> FloatArray:
        return np.asarray(self.a_matrix, dtype=float)

    @property
    def info(self) -> KappaInfo:
        return kappa_from_phi(self.phi1, self.phi2, self.n_dim)

    @classmethod
    def isotropic(cls, n_dim: int, kappa: float) -> 'AnisoSpec':
        """φ′(0) = −κ/2, φ″(0) = 1/4 with A = I."""
        return cls(
            n_dim=n_dim,
            a_matrix=tuple(tuple(float(i == j) for j in range(n_dim)) for i in range(n_dim)),
            phi1=-kappa / 2.0,
            phi2=0.25,
        )


@dataclass(slots=True, kw_only=True)
class SymmetricMatrixSample:
    """A batch of symmetric matrices, entries of shape (size, N, N)."""

    entries: FloatArray

    def __post_init__(self):
        if self.entries.ndim != 3 or self.entries.shape[1] != self.entries.shape[2]:
            raise InvalidParameterError(f'expected (size, N, N) entries, got {self.entries.shape}')
        if not np.array_equal(self.entries, np.swapaxes(self.entries, 1, 2)):
            raise InvalidParameterError('matrix sample is not exactly symmetric')

    @property
    def n_dim(self) -> int:
        return self.entries.shape[1]

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def eigenvalues(self) -> FloatArray:
        """Full spectra in ascending order, shape (size, N)."""
        return np.linalg.eigvalsh(self.entries)

    def trace(self) -> FloatArray:
        return np.trace(self.entries, axis1=1, axis2=2)


def _as_param(c: GOICovParam | float, n_dim: int) -> GOICovParam:
    if isinstance(c, GOICovParam):
        if c.n_dim != n_dim:
            raise InvalidParameterError(f'GOICovParam is for N={c.n_dim}, not N={n_dim}')
        return c

    try:
        return GOICovParam(c=c, n_dim=n_dim)
    except ValueError as e:
        raise InvalidParameterError(str(e)) from e


def goi_entry_covariance(i: int, j: int, k: int, l: int, c: float) -> float:
    if min(i, j, k, l) < 0:
        raise InvalidParameterError('matrix indices must be non-negative')

    return 0.5 * (float(i == k and j == l) + float(i == l and j == k)) + c * float(
        i == j and k == l,
    )


def sample_goe(n_dim: int, stream: RandomStream, size: int = 1) -> SymmetricMatrixSample:
    if n_dim < 1 or size < 1:
        raise InvalidParameterError('N and size must be positive')

    g = stream.standard_normal((size, n_dim, n_dim))
    return SymmetricMatrixSample(entries=0.5 * (g + np.swapaxes(g, 1, 2)))


def sample_goi(n_dim: int, c: float, stream: RandomStream, size: int = 1) -> SymmetricMatrixSample:
    """GOE + √c·ξ·I with one standard normal ξ per matrix."""
    if c < 0.0:
        raise InvalidParameterError(
            f'direct GOI sampling needs c >= 0, got c={c}; '
            "use expect_goi(..., method='importance') for negative c",
        )
    if n_dim < 1 or size < 1:
        raise InvalidParameterError('N and size must be positive')

    z = stream.standard_normal((size, n_dim * n_dim + 1))
    g = z[:, :-1].reshape(size, n_dim, n_dim)
    shift = math.sqrt(c) * z[:, -1]
    entries = 0.5 * (g + np.swapaxes(g, 1, 2)) + shift[:, None, None] * np.eye(n_dim)
    return SymmetricMatrixSample(entries=entries)


def goi_log_normalizer(n_dim: int) -> float:
    """log K_N with K_N = 2^{N/2} ∏_{i=1}^N Γ(i/2)."""
    return 0.5 * n_dim * math.log(2.0) + sum(math.lgamma(i / 2.0) for i in range(1, n_dim + 1))


def _logdensity(lam: FloatArray, c: float) -> FloatArray:
    n_dim = lam.shape[-1]
    one_nc = 1.0 + n_dim * c
    total = lam.sum(axis=-1)

    log_vdm = np.zeros(lam.shape[:-1])
    with np.errstate(divide='ignore'):
        for i in range(n_dim):
            for j in range(i + 1, n_dim):
                log_vdm = log_vdm + np.log(np.abs(lam[..., j] - lam[..., i]))

    return (
        -goi_log_normalizer(n_dim)
        - 0.5 * math.log(one_nc)
        - 0.5 * (lam * lam).sum(axis=-1)
        + c / (2.0 * one_nc) * total * total
        + log_vdm
    )


def goi_ordered_eig_logdensity(lambdas: FloatArray, c: GOICovParam | float) -> FloatArray:
    """
    log f_c of the ordered eigenvalues λ₁ ≤ … ≤ λ_N of a GOI(c) matrix; accepts a
    batch with the eigenvalues on the last axis.
    """
    lam = _finite(lambdas, 'lambdas')
    if lam.ndim == 0:
        lam = lam[None]

    param = _as_param(c, lam.shape[-1])

    if np.any(np.diff(lam, axis=-1) < 0.0):
        raise InvalidParameterError('eigenvalues must be sorted in ascending order')

    return _logdensity(lam, param.c)[()]


def _importance_weights(trace: FloatArray, param: GOICovParam) -> FloatArray:
    one_nc = 1.0 + param.n_dim * param.c
    return np.exp(param.c * trace * trace / (2.0 * one_nc)) / math.sqrt(one_nc)


def _resolve_method(method: str, c: float) -> str:
    if method not in {'auto', 'direct', 'importance'}:
        raise InvalidParameterError(
            f"method must be 'auto', 'direct' or 'importance', got {method!r}",
        )
    if method == 'auto':
        return 'direct' if c >= 0.0 else 'importance'
    return method


def sample_goi_spectra(
    n_dim: int,
    c: GOICovParam | float,
    n_samples: int,
    stream: RandomStream,
    *,
    method: str = 'auto',
    n_chunks: int | None = None,
    workers: int = 1,
) -> tuple[FloatArray, FloatArray | None]:
    """
    Ascending eigenvalues of n_samples matrices, shape (n_samples, N), plus the
    importance weights f_c/f_0 when they were drawn from GOE (None for direct
    draws). Chunk j always uses stream.spawn(j).
    """
    param = _as_param(c, n_dim)
    method = _resolve_method(method, param.c)
    counts = split_counts(n_samples, n_chunks or get_settings().mc_chunks)

    def run_chunk(j: int) -> tuple[FloatArray, FloatArray]:
        if method == 'direct':
            sample = sample_goi(n_dim, param.c, stream.spawn(j), counts[j])
            return sample.eigenvalues(), np.empty(0)

        sample = sample_goe(n_dim, stream.spawn(j), counts[j])
        return sample.eigenvalues(), _importance_weights(sample.trace(), param)

    parts = map_chunks(run_chunk, len(counts), workers)
    eigs = np.concatenate([p[0] for p in parts])

    if method == 'direct':
        return eigs, None

    weights = np.concatenate([p[1] for p in parts])
    ess = weights.sum() ** 2 / np.sum(weights * weights)

    if ess < MIN_ESS_FRACTION * n_samples:
        raise WeightDegeneracyError(ess=float(ess), n_samples=n_samples)

    if ess < 0.1 * n_samples:
        logger.warning(f'GOI({param.c}) importance weights: effective sample size {ess:.0f}')

    return eigs, weights


def expect_goi(
    g: EigenFunctional,
    n_dim: int,
    c: GOICovParam | float,
    n_samples: int,
    stream: RandomStream,
    *,
    method: str = 'auto',
    n_chunks: int | None = None,
    workers: int = 1,
) -> EstimateWithError:
    """
    E_GOI(c)[g(λ₁, …, λ_N)] for a symmetric g taking eigenvalues on the last axis.

    'importance' draws GOE matrices and weights each by
    w = exp(c·s²/(2(1+Nc)))/√(1+Nc), s = trace, the exact ratio f_c/f_0; 'direct'
    draws GOI(c) (c >= 0 only). 'auto' picks direct for c >= 0, where the weights
    would have infinite variance once Nc >= 1.
    """
    eigs, weights = sample_goi_spectra(
        n_dim,
        c,
        n_samples,
        stream,
        method=method,
        n_chunks=n_chunks,
        workers=workers,
    )
    terms = np.asarray(g(eigs), dtype=float)

    if weights is not None:
        terms = weights * terms

    return EstimateWithError.from_terms(terms)


def expect_goi_wedge(g: EigenFunctional, c: GOICovParam | float, n_dim: int, cfg: QuadConfig | None = None) -> float:
    """
    Deterministic E_GOI(c)[g] by quadrature over the ordered wedge, N ∈ {1, 2}.

    The wedge is cut along the coordinate axes so that functionals with kinks or
    jumps at λ_i = 0, such as ∏|λ_i|·1{λ_N < 0}, are smooth on every piece. For
    N = 2 the pieces are λ₁ < 0 ≤ λ₂ in (λ₁, λ₂), and the two same-sign pieces
    in (λ₂, d) and (λ₁, d) with d = λ₂ − λ₁ >= 0 (Jacobian 1).
    """
    cfg = cfg or QuadConfig()
    param = _as_param(c, n_dim)
    radius = cfg.truncation_radius

    def weighted(lam: FloatArray) -> FloatArray:
        return g(lam) * np.exp(_logdensity(lam, param.c))

    if n_dim == 1:

        def line(x: FloatArray) -> FloatArray:
            return weighted(x[..., None])

        return integrate_1d(line, -radius, 0.0, cfg) + integrate_1d(line, 0.0, radius, cfg)

    if n_dim == 2:

        def mixed(lo: FloatArray, hi: FloatArray) -> FloatArray:
            return weighted(np.stack([lo, hi], axis=-1))

        def negative(hi: FloatArray, d: FloatArray) -> FloatArray:
            return weighted(np.stack([hi - d, hi], axis=-1))

        def positive(lo: FloatArray, d: FloatArray) -> FloatArray:
            return weighted(np.stack([lo, lo + d], axis=-1))

        return (
            integrate_2d(mixed, (-radius, 0.0), (0.0, radius), cfg)
            + integrate_2d(negative, (-radius, 0.0), (0.0, radius), cfg)
            + integrate_2d(positive, (0.0, radius), (0.0, radius), cfg)
        )

    raise InvalidParameterError(f'wedge quadrature is available for N <= 2, got N={n_dim}')


def kappa_from_phi(phi1: float, phi2: float, n_dim: int) -> KappaInfo:
    if not phi1 < 0.0 or not phi2 > 0.0:
        raise InvalidParameterError(
            f"covariance curvature requires phi'(0) < 0 and phi''(0) > 0, got {phi1}, {phi2}",
        )
    if n_dim < 1:
        raise InvalidParameterError(f'dimension must be >= 1, got {n_dim}')

    kappa = -phi1 / math.sqrt(phi2)
    bound = (n_dim + 2) / n_dim
    gap = bound - kappa * kappa

    if abs(gap) <= CRITICAL_TOL:
        return KappaInfo(kappa=kappa, n_dim=n_dim, branch=Branch.CRITICAL)

    if gap < 0.0:
        raise InvalidParameterError(
            f'kappa**2 = {kappa * kappa:.6g} exceeds (N+2)/N = {bound:.6g}; '
            'every smooth isotropic covariance satisfies kappa**2 <= (N+2)/N',
        )

    if gap < NEAR_CRITICAL_GAP:
        logger.warning(
            f'kappa**2 is within {gap:.2e} of (N+2)/N: GOI({(1 - kappa * kappa) / 2:.6g}) '
            'is close to degenerate and importance weights may be poorly conditioned',
        )

    return KappaInfo(kappa=kappa, n_dim=n_dim, branch=Branch.SUBCRITICAL)


def _critical_denominator_terms(eigs: FloatArray) -> FloatArray:
    return np.prod(-eigs, axis=1) * (eigs[:, -1] < 0.0)


def _polynomial_coefficients(eigs: FloatArray, beta: float) -> FloatArray:
    """Coefficients in x of ∏_j (βx − λ_j), lowest degree first, shape (n, N+1)."""
    n, n_dim = eigs.shape
    coef = np.zeros((n, n_dim + 1))
    coef[:, 0] = 1.0

    for j in range(n_dim):
        shifted = np.zeros_like(coef)
        shifted[:, 1:] = beta * coef[:, :-1]
        coef = shifted - eigs[:, j : j + 1] * coef

    return coef


def _gaussian_upper_moments(a: FloatArray, degree: int) -> FloatArray:
    """M_k(a) = ∫_a^∞ x^k φ(x) dx for k = 0..degree, shape (n, degree+1)."""
    moments = np.zeros((a.size, degree + 1))
    density = _pdf(a)
    moments[:, 0] = _tail(a)

    if degree >= 1:
        moments[:, 1] = density

    for k in range(2, degree + 1):
        moments[:, k] = a ** (k - 1) * density + (k - 1) * moments[:, k - 2]

    return moments


def _numerator_terms(eigs: FloatArray, beta: float, u: float, radius: float) -> FloatArray:
    """
    Per-draw ∫_u^R φ(x)∏_j|βx − λ_j| 1{λ_N < βx} dx, in closed form: on the
    support every factor is positive, so the integrand is φ times a polynomial.
    """
    n_dim = eigs.shape[1]
    lower = np.maximum(u, eigs[:, -1] / beta)
    upper = np.full_like(lower, radius)
    active = lower < radius
    lower = np.minimum(lower, radius)

    coef = _polynomial_coefficients(eigs, beta)
    mass = _gaussian_upper_moments(lower, n_dim) - _gaussian_upper_moments(upper, n_dim)
    return np.where(active, np.sum(coef * mass, axis=1), 0.0)


def _ratio(num: EstimateWithError, den: EstimateWithError) -> EstimateWithError:
    """Delta-method ratio of estimates from independent streams."""
    if abs(den.value) <= 3.0 * den.stderr:
        raise UnreliableEstimateError(
            f'denominator {den.value:.3e} is within 3 standard errors ({den.stderr:.3e}) of zero',
        )

    value = num.value / den.value
    stderr = math.hypot(num.stderr / den.value, value * den.stderr / den.value)
    return EstimateWithError(value=value, stderr=stderr, n_samples=min(num.n_samples, den.n_samples))


def _shared_ratio(num_terms: FloatArray, den_terms: FloatArray) -> EstimateWithError:
    """Ratio of means over the same draws; stderr from the linearized residuals."""
    den = EstimateWithError.from_terms(den_terms)

    if abs(den.value) <= 3.0 * den.stderr:
        raise UnreliableEstimateError(
            f'denominator {den.value:.3e} is within 3 standard errors ({den.stderr:.3e}) of zero',
        )

    value = float(np.mean(num_terms)) / den.value
    residuals = (num_terms - value * den_terms) / den.value
    stderr = float(np.std(residuals, ddof=1)) / math.sqrt(residuals.size)
    return EstimateWithError(value=value, stderr=stderr, n_samples=residuals.size)


def _defaults(
    n_samples: int | None,
    stream: RandomStream | None,
    cfg: QuadConfig | None,
) -> tuple[int, RandomStream, QuadConfig]:
    settings = get_settings()
    return (
        n_samples or settings.n_samples,
        stream or normal_stream(settings.seed),
        cfg or QuadConfig.from_settings(settings),
    )


def _denominator(n_dim: int, n_samples: int, stream: RandomStream, **kw) -> EstimateWithError:
    return expect_goi(_critical_denominator_terms, n_dim, 0.5, n_samples, stream.spawn(1), **kw)


def peak_tail_aniso(
    spec: AnisoSpec,
    u: float,
    n_samples: int | None = None,
    stream: RandomStream | None = None,
    cfg: QuadConfig | None = None,
    *,
    n_chunks: int | None = None,
    workers: int = 1,
) -> EstimateWithError:
    """
    F(u) by Monte Carlo over GOI spectra. One eigenvalue sample is shared by every
    x in the outer integral, which is then done exactly per draw.

    Subcritical: numerator from stream.spawn(0) at c = (1−κ²)/2, denominator from
    stream.spawn(1) at c = 1/2. Critical: both from the same c = 1/2 draws.
    """
    n_samples, stream, cfg = _defaults(n_samples, stream, cfg)
    u = float(_finite(u, 'u'))
    info = spec.info
    n_dim = spec.n_dim
    kw = {'n_chunks': n_chunks, 'workers': workers}

    if info.branch is Branch.CRITICAL:
        eigs, _ = sample_goi_spectra(n_dim, 0.5, n_samples, stream.spawn(1), **kw)
        den_terms = _critical_denominator_terms(eigs)
        level = -math.sqrt((n_dim + 2) / (2.0 * n_dim)) * u
        num_terms = den_terms * (eigs.mean(axis=1) <= level)
        return _shared_ratio(num_terms, den_terms)

    beta = info.kappa / math.sqrt(2.0)
    c = 0.5 * (1.0 - info.kappa**2)
    radius = cfg.truncation_radius

    def numerator_functional(eigs: FloatArray) -> FloatArray:
        return _numerator_terms(eigs, beta, u, radius)

    num = expect_goi(numerator_functional, n_dim, c, n_samples, stream.spawn(0), **kw)
    den = _denominator(n_dim, n_samples, stream, **kw)
    return _ratio(num, den)


def peak_density_aniso(
    spec: AnisoSpec,
    x: float,
    n_samples: int | None = None,
    stream: RandomStream | None = None,
    cfg: QuadConfig | None = None,
    *,
    n_chunks: int | None = None,
    workers: int = 1,
) -> EstimateWithError:
    """h(x) = φ(x)E_GOI((1−κ²)/2)[∏|λ_j − κx/√2| 1{λ_N < κx/√2}] / E_GOI(1/2)[…], subcritical only."""
    n_samples, stream, cfg = _defaults(n_samples, stream, cfg)
    x = float(_finite(x, 'x'))
    info = spec.info

    if info.branch is Branch.CRITICAL:
        raise InvalidParameterError(
            'the critical branch kappa**2 = (N+2)/N has no density evaluator; use peak_tail_aniso',
        )

    beta = info.kappa / math.sqrt(2.0)
    c = 0.5 * (1.0 - info.kappa**2)
    kw = {'n_chunks': n_chunks, 'workers': workers}

    def density_functional(eigs: FloatArray) -> FloatArray:
        level = beta * x
        return float(_pdf(x)) * np.prod(level - eigs, axis=1) * (eigs[:, -1] < level)

    num = expect_goi(density_functional, spec.n_dim, c, n_samples, stream.spawn(0), **kw)
    den = _denominator(spec.n_dim, n_samples, stream, **kw)
    return _ratio(num, den)


def half_normal_mean(variance: float) -> float:
    """E[|Z|1{Z<0}] for Z ~ N(0, variance); the N = 1 reference value of E_GOI."""
    return math.sqrt(variance) / math.sqrt(2.0 * math.pi)

