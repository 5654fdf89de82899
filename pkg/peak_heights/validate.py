"""
Simulate-and-count oracle for the peak height formulas: exact Gaussian simulation
on grids, discrete local maxima, empirical peak height distributions and their
Kolmogorov–Smirnov distance to the theoretical exceedance F(u).
"""

import csv
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, TextIO

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import linalg, ndimage, stats

from peak_heights.cosine import CosineSpec, cosine_tail_function
from peak_heights.decorators import log_exec_time
from peak_heights.exceptions import InsufficientPeaksError, InvalidParameterError, SimulationError
from peak_heights.numerics import QuadConfig, RandomStream, map_chunks, normal_stream, split_counts
from peak_heights.planar import (
    PlanarSpec,
    peak_tail_planar_table,
    planar_spec_from_covariance,
    rescale_to_unit_gradient,
)
from peak_heights.process1d import (
    SpectralTriple1D,
    conditional_rho,
    peak_tail_1d,
    peak_tail_stationary_1d,
)
from peak_heights.settings import get_settings
from peak_heights.typings import FloatArray, TailFunction

EIGEN_FLOOR = -1e-8
UNIT_VARIANCE_TOL = 1e-10
CIRCULANT_TOL = 1e-6
DENSE_FALLBACK_POINTS = 64 * 64
MIN_GRID_POINTS = 16
MIN_KS_SAMPLES = 200
MOMENT_IDENTITY_TOL = 1e-4
# eigenvalues below this fraction of the largest one are rounding noise
_KEEP_RELATIVE = 1e-10

Covariance1D = Callable[[FloatArray, FloatArray], FloatArray]
Covariance2D = Callable[[FloatArray, FloatArray], FloatArray]


class Grid1D(BaseModel):
    model_config = ConfigDict(frozen=True)

    origin: float = 0.0
    step: float = Field(gt=0)
    n_points: int = Field(ge=MIN_GRID_POINTS)

    @property
    def points(self) -> FloatArray:
        return self.origin + self.step * np.arange(self.n_points)

    @property
    def shape(self) -> tuple[int]:
        return (self.n_points,)

    def locate(self, index: tuple[int, ...]) -> tuple[float, ...]:
        return (self.origin + self.step * index[0],)


class Grid2D(BaseModel):
    model_config = ConfigDict(frozen=True)

    origin: tuple[float, float] = (0.0, 0.0)
    step: tuple[float, float]
    n_points: tuple[int, int]

    @field_validator('step')
    @classmethod
    def _check_step(cls, v: tuple[float, float]) -> tuple[float, float]:
        if not all(s > 0 for s in v):
            raise ValueError(f'step > 0 violated: {v}')
        return v

    @field_validator('n_points')
    @classmethod
    def _check_points(cls, v: tuple[int, int]) -> tuple[int, int]:
        if not all(n >= MIN_GRID_POINTS for n in v):
            raise ValueError(f'n_points >= {MIN_GRID_POINTS} per axis violated: {v}')
        return v

    def axis(self, k: int) -> FloatArray:
        return self.origin[k] + self.step[k] * np.arange(self.n_points[k])

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_points

    def locate(self, index: tuple[int, ...]) -> tuple[float, ...]:
        return tuple(self.origin[k] + self.step[k] * index[k] for k in range(2))


Grid = Grid1D | Grid2D


@dataclass(slots=True, kw_only=True)
class CovarianceHandle1D:
    """
    Unit-variance covariance C(t, s), vectorized over broadcastable arrays, with an
    optional closed form for the spectral triple at t.
    """

    name: str
    cov: Covariance1D
    spectral: Callable[[float], SpectralTriple1D] | None = None
    kappa: float | None = None

    def check(self, t: FloatArray) -> FloatArray:
        """Covariance matrix on the points t after checking unit variance and symmetry."""
        t = np.asarray(t, dtype=float)
        matrix = np.asarray(self.cov(t[:, None], t[None, :]), dtype=float)
        diag_err = float(np.max(np.abs(np.diag(matrix) - 1.0)))

        if diag_err > UNIT_VARIANCE_TOL:
            raise InvalidParameterError(
                f'{self.name}: C(t, t) = 1 violated by {diag_err:.3e}',
            )
        if float(np.max(np.abs(matrix - matrix.T))) > UNIT_VARIANCE_TOL:
            raise InvalidParameterError(f'{self.name}: C(t, s) = C(s, t) violated')

        return matrix

    def triple(self, t: float) -> SpectralTriple1D:
        if self.spectral is not None:
            return self.spectral(t)
        return spectral_moments_1d(self, t)


def squared_exponential_1d(length: float = 1.0) -> CovarianceHandle1D:
    """C(t, s) = exp(−(t−s)²/(2ℓ²)); κ = 1 for every ℓ."""
    if not length > 0:
        raise InvalidParameterError('correlation length must be positive')

    def cov(t, s):
        return np.exp(-0.5 * ((t - s) / length) ** 2)

    def spectral(_t: float) -> SpectralTriple1D:
        return SpectralTriple1D(lambda1=length**-2, lambda2=3.0 * length**-4, r=0.0)

    return CovarianceHandle1D(name='squared-exponential', cov=cov, spectral=spectral, kappa=1.0)


def time_warped_1d(amplitude: float = 0.3) -> CovarianceHandle1D:
    """
    X(t) = Z(f(t)) with f(t) = t + a·sin t and Z squared-exponential. λ₁ = f′²,
    λ₂ = 3f′⁴ + f″², r = f′f″, so ρ(t) = −1/√3 everywhere.
    """
    if not 0 <= amplitude < 1:
        raise InvalidParameterError('warp amplitude must lie in [0, 1) to keep f monotone')

    def warp(t):
        return t + amplitude * np.sin(t)

    def cov(t, s):
        return np.exp(-0.5 * (warp(t) - warp(s)) ** 2)

    def spectral(t: float) -> SpectralTriple1D:
        d1 = 1.0 + amplitude * math.cos(t)
        d2 = -amplitude * math.sin(t)
        return SpectralTriple1D(lambda1=d1**2, lambda2=3.0 * d1**4 + d2**2, r=d1 * d2)

    return CovarianceHandle1D(name='time-warped', cov=cov, spectral=spectral)


def amplitude_mixture_1d(
    theta0: float = math.pi / 4,
    theta1: float = math.pi / 6,
    period: float = 40.0,
) -> CovarianceHandle1D:
    """
    C(t, s) = p(t)p(s)e^{−(t−s)²/2} + q(t)q(s)e^{−(t−s)²/8} with p = cos θ(t),
    q = sin θ(t), θ(t) = θ₀ + θ₁ sin(2πt/period).
    """

    def theta(t):
        return theta0 + theta1 * np.sin(2.0 * math.pi * t / period)

    def cov(t, s):
        tt, ts = theta(t), theta(s)
        d = t - s
        return np.cos(tt) * np.cos(ts) * np.exp(-0.5 * d * d) + np.sin(tt) * np.sin(ts) * np.exp(
            -0.125 * d * d,
        )

    return CovarianceHandle1D(name='amplitude-mixture', cov=cov)


@dataclass(slots=True, kw_only=True)
class StationaryCovariance2D:
    """Stationary planar covariance C(τ₁, τ₂) of the lag, vectorized."""

    name: str
    cov: Covariance2D


def separable_gaussian_2d(ell1: float = 1.0, ell2: float = 2.0) -> StationaryCovariance2D:
    def cov(t1, t2):
        return np.exp(-0.5 * (t1 / ell1) ** 2 - 0.5 * (t2 / ell2) ** 2)

    return StationaryCovariance2D(name=f'separable-gaussian({ell1}, {ell2})', cov=cov)


@dataclass(slots=True, kw_only=True)
class PeakSample:
    location: tuple[float, ...]
    height: float
    index: tuple[int, ...] = ()
    replication: int = 0


@dataclass(slots=True, kw_only=True)
class PeakSet:
    """Heights of the peaks of a batch of fields, their grid indices and the field each came from."""

    heights: FloatArray
    index: np.ndarray
    replication: np.ndarray

    @property
    def size(self) -> int:
        return self.heights.size

    def samples(self, grid: Grid) -> list[PeakSample]:
        return [
            PeakSample(
                location=grid.locate(idx),
                height=float(h),
                index=idx,
                replication=int(r),
            )
            for h, idx, r in zip(
                self.heights,
                (tuple(int(i) for i in row) for row in self.index),
                self.replication,
                strict=True,
            )
        ]


@dataclass(slots=True, kw_only=True)
class EmpiricalCDF:
    heights: FloatArray
    count: int = field(init=False)

    def __post_init__(self):
        self.heights = np.sort(np.asarray(self.heights, dtype=float).ravel())
        self.count = self.heights.size

    def cdf(self, u: FloatArray) -> FloatArray:
        """Right-continuous P(H ≤ u)."""
        return np.searchsorted(self.heights, u, side='right') / self.count

    def exceedance(self, u: FloatArray) -> FloatArray:
        return 1.0 - self.cdf(u)


@dataclass(slots=True, kw_only=True)
class KSResult:
    statistic: float
    n_samples: int
    pvalue: float = math.nan

    @property
    def sufficient(self) -> bool:
        return self.n_samples >= MIN_KS_SAMPLES


def _low_rank_factor(matrix: FloatArray, label: str) -> FloatArray:
    lam, vec = linalg.eigh(matrix)
    scale = max(1.0, float(lam[-1]))

    if lam[0] < EIGEN_FLOOR * scale:
        raise SimulationError(
            f'{label}: covariance is indefinite, smallest eigenvalue {lam[0]:.3e} '
            f'is below the floor {EIGEN_FLOOR * scale:.3e}',
        )

    keep = lam > _KEEP_RELATIVE * scale
    rank = int(keep.sum())

    if rank < 2:
        raise SimulationError(f'{label}: covariance has numerical rank {rank}, peaks are undefined')

    logger.debug(f'{label}: kept {rank} of {lam.size} eigenvalues')
    return vec[:, keep] * np.sqrt(lam[keep])


class PathSampler1D:
    """Exact Gaussian paths on a grid from a symmetric factor of the grid covariance."""

    def __init__(self, cov: CovarianceHandle1D, grid: Grid1D):
        self.grid = grid
        self.factor = _low_rank_factor(cov.check(grid.points), cov.name)

    def sample(self, stream: RandomStream, n_paths: int = 1) -> FloatArray:
        z = stream.standard_normal((n_paths, self.factor.shape[1]))
        return z @ self.factor.T


def simulate_1d(
    cov: CovarianceHandle1D,
    grid: Grid1D,
    stream: RandomStream,
    n_paths: int = 1,
) -> FloatArray:
    """Paths of shape (n_paths, n_points)."""
    return PathSampler1D(cov, grid).sample(stream, n_paths)


class CirculantEmbedding2D:
    """
    Stationary field on a grid as the corner of a periodic field on a padded torus.
    One complex FFT gives two independent fields (real and imaginary parts).
    """

    def __init__(
        self,
        cov: StationaryCovariance2D,
        grid: Grid2D,
        padding: int = 2,
        max_padding: int = 4,
    ):
        self.grid = grid
        self.cov = cov
        factor = padding

        while factor <= max_padding:
            sqrt_eig = self._embed(factor)
            if sqrt_eig is not None:
                self.padding = factor
                self.sqrt_eig = sqrt_eig
                return
            logger.warning(f'{cov.name}: circulant embedding indefinite at padding {factor}x')
            factor *= 2

        raise SimulationError(
            f'{cov.name}: circulant embedding is indefinite up to padding {max_padding}x',
        )

    def _embed(self, factor: int) -> FloatArray | None:
        m1, m2 = (factor * n for n in self.grid.n_points)
        lags = []

        for m, h in zip((m1, m2), self.grid.step, strict=True):
            k = np.arange(m)
            lags.append(np.where(k <= m // 2, k, k - m) * h)

        t1, t2 = np.meshgrid(*lags, indexing='ij')
        eig = np.fft.fft2(self.cov.cov(t1, t2)).real

        if eig.min() < -CIRCULANT_TOL * eig.max():
            return None

        return np.sqrt(np.clip(eig, 0.0, None) / (m1 * m2))

    def sample(self, stream: RandomStream, n_fields: int = 1) -> FloatArray:
        n1, n2 = self.grid.n_points
        fields = []

        for _ in range((n_fields + 1) // 2):
            eps = stream.standard_normal((2,) + self.sqrt_eig.shape)
            y = np.fft.fft2(self.sqrt_eig * (eps[0] + 1j * eps[1]))
            fields.extend([y.real[:n1, :n2], y.imag[:n1, :n2]])

        return np.stack(fields[:n_fields])


def _dense_2d(cov: StationaryCovariance2D, grid: Grid2D, stream: RandomStream, n_fields: int) -> FloatArray:
    t1, t2 = np.meshgrid(grid.axis(0), grid.axis(1), indexing='ij')
    p1, p2 = t1.ravel(), t2.ravel()
    matrix = np.asarray(cov.cov(p1[:, None] - p1[None, :], p2[:, None] - p2[None, :]), dtype=float)
    factor = _low_rank_factor(matrix, cov.name)
    z = stream.standard_normal((n_fields, factor.shape[1]))
    return (z @ factor.T).reshape(n_fields, *grid.n_points)


def simulate_stationary_2d(
    cov: StationaryCovariance2D,
    grid: Grid2D,
    stream: RandomStream,
    *,
    n_fields: int = 1,
    padding: int = 2,
    method: str = 'auto',
) -> FloatArray:
    """
    Fields of shape (n_fields, n1, n2). 'auto' uses circulant embedding and falls
    back to dense factorization on grids of at most 64x64 points.
    """
    if method not in {'auto', 'circulant', 'dense'}:
        raise InvalidParameterError(f"method must be 'auto', 'circulant' or 'dense', got {method!r}")

    if method == 'dense':
        return _dense_2d(cov, grid, stream, n_fields)

    try:
        return CirculantEmbedding2D(cov, grid, padding=padding).sample(stream, n_fields)
    except SimulationError:
        n1, n2 = grid.n_points
        if method == 'circulant' or n1 * n2 > DENSE_FALLBACK_POINTS:
            raise

    logger.warning(f'{cov.name}: falling back to dense factorization on a {n1}x{n2} grid')
    return _dense_2d(cov, grid, stream, n_fields)


def draw_cosine_coefficients(spec: CosineSpec, stream: RandomStream, n_fields: int = 1) -> FloatArray:
    """(ζ₁..ζ_N, ζ′₁..ζ′_N) per field, shape (n_fields, 2N)."""
    return stream.standard_normal((n_fields, 2 * spec.n_dim))


def cosine_fields_on_grid(spec: CosineSpec, zeta: FloatArray, grid: Grid) -> FloatArray:
    zeta = np.atleast_2d(zeta)
    n = spec.n_dim
    a, b = zeta[:, :n], zeta[:, n:]

    if isinstance(grid, Grid1D) and n == 1:
        phase = spec.omegas[0] * grid.points
        return (a[:, :1] * np.cos(phase) + b[:, :1] * np.sin(phase))

    if isinstance(grid, Grid2D) and n == 2:
        parts = [
            a[:, k, None] * np.cos(spec.omegas[k] * grid.axis(k)) + b[:, k, None] * np.sin(
                spec.omegas[k] * grid.axis(k),
            )
            for k in range(2)
        ]
        return (parts[0][:, :, None] + parts[1][:, None, :]) / math.sqrt(2.0)

    raise InvalidParameterError(f'gridded cosine fields need N in {{1, 2}} with a matching grid, got N={n}')


def simulate_cosine(spec: CosineSpec, grid: Grid, stream: RandomStream, n_fields: int = 1) -> FloatArray:
    return cosine_fields_on_grid(spec, draw_cosine_coefficients(spec, stream, n_fields), grid)


def _peak_mask(fields: FloatArray, n_axes: int) -> FloatArray:
    """Strict local maxima over the full 3^d − 1 neighborhood of the last n_axes axes."""
    batch = fields.ndim - n_axes
    footprint = np.ones((1,) * batch + (3,) * n_axes, dtype=bool)
    footprint[(0,) * batch + (1,) * n_axes] = False
    neighbor_max = ndimage.maximum_filter(fields, footprint=footprint, mode='nearest')

    mask = fields > neighbor_max
    interior = np.zeros_like(mask)
    interior[(slice(None),) * batch + (slice(1, -1),) * n_axes] = True
    return mask & interior


def find_peaks(field: FloatArray, grid: Grid, replication: int = 0) -> list[PeakSample]:
    """Interior grid points strictly above all axis and diagonal neighbors; ties are dropped."""
    field = np.asarray(field, dtype=float)

    if field.shape != grid.shape:
        raise InvalidParameterError(f'field shape {field.shape} does not match grid {grid.shape}')

    mask = _peak_mask(field, field.ndim)
    index = np.argwhere(mask)
    peaks = PeakSet(heights=field[mask], index=index, replication=np.full(len(index), replication))
    return peaks.samples(grid)


def is_strict_maximum(field: FloatArray, index: tuple[int, ...]) -> bool:
    window = tuple(slice(i - 1, i + 2) for i in index)
    block = np.asarray(field)[window].copy()
    center = (1,) * block.ndim
    height = block[center]
    block[center] = -np.inf
    return bool(np.all(height > block))


def empirical_cdf(samples: Iterable[float] | FloatArray) -> EmpiricalCDF:
    heights = np.fromiter(samples, dtype=float) if not isinstance(samples, np.ndarray) else samples

    if heights.size == 0:
        raise InsufficientPeaksError(n_peaks=0, required=1)

    return EmpiricalCDF(heights=heights)


def ks_distance(emp: EmpiricalCDF, tail: TailFunction) -> KSResult:
    """One-sample KS distance sup_u |P̂(H > u) − F(u)|, with F given as an exceedance."""

    def cdf(u: FloatArray) -> FloatArray:
        return 1.0 - np.asarray(tail(u), dtype=float)

    result = stats.kstest(emp.heights, cdf, method='asymp')
    return KSResult(statistic=float(result.statistic), n_samples=emp.count, pvalue=float(result.pvalue))


def ks_two_sample(a: EmpiricalCDF, b: EmpiricalCDF) -> KSResult:
    result = stats.ks_2samp(a.heights, b.heights, method='asymp')
    return KSResult(
        statistic=float(result.statistic),
        n_samples=min(a.count, b.count),
        pvalue=float(result.pvalue),
    )


_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def spectral_moments_1d(cov: CovarianceHandle1D, t: float, step: float = 0.08) -> SpectralTriple1D:
    """
    λ₁ = ∂t∂sC, λ₂ = ∂t²∂s²C, r = ∂t∂s²C at s = t by fourth-order central
    differences on a 5x5 stencil, with one Richardson step (h, h/2). The smaller
    steps one would first try lose the fourth derivative to rounding.
    """

    def stencil(h: float) -> np.ndarray:
        k = t + h * np.arange(-2, 3)
        c = np.asarray(cov.cov(k[:, None], k[None, :]), dtype=float)
        return np.array(
            [
                _D1 @ c @ _D1 / h**2,
                _D2 @ c @ _D2 / h**4,
                _D1 @ c @ _D2 / h**3,
                c[2, :] @ _D2 / h**2,
            ],
        )

    lambda1, lambda2, r, cross = (16.0 * stencil(step / 2.0) - stencil(step)) / 15.0

    if abs(cross + lambda1) > MOMENT_IDENTITY_TOL * max(1.0, lambda1):
        raise InvalidParameterError(
            f"{cov.name}: E[X X''] = -Var X' violated at t={t} "
            f'({cross:.6g} vs {-lambda1:.6g}); covariance is not smooth or not unit-variance',
        )

    try:
        return SpectralTriple1D(lambda1=lambda1, lambda2=lambda2, r=r)
    except ValueError as e:
        raise InvalidParameterError(f'{cov.name}: finite-difference moments invalid at t={t}: {e}') from e


class ValidationReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    family: str
    n_peaks: int
    ks: float
    threshold: float
    passed: bool
    seed: int
    grid: dict[str, Any]
    details: dict[str, Any] = Field(default_factory=dict)


def _require_peaks(n_peaks: int, required: int) -> None:
    if n_peaks < max(required, MIN_KS_SAMPLES):
        raise InsufficientPeaksError(n_peaks=n_peaks, required=max(required, MIN_KS_SAMPLES))


def _collect_peaks(
    sample_chunk: Callable[[RandomStream, int], FloatArray],
    n_axes: int,
    n_fields: int,
    stream: RandomStream,
    workers: int,
) -> PeakSet:
    """Peaks of n_fields fields drawn in fixed chunks; chunk j uses stream.spawn(j)."""
    counts = split_counts(n_fields, get_settings().mc_chunks)
    offsets = np.cumsum([0, *counts[:-1]])

    def run_chunk(j: int) -> tuple[FloatArray, np.ndarray, np.ndarray]:
        fields = sample_chunk(stream.spawn(j), counts[j])
        mask = _peak_mask(fields, n_axes)
        idx = np.argwhere(mask)
        return fields[mask], idx[:, 1:], offsets[j] + idx[:, 0]

    parts = map_chunks(run_chunk, len(counts), workers)
    return PeakSet(
        heights=np.concatenate([p[0] for p in parts]),
        index=np.concatenate([p[1] for p in parts]),
        replication=np.concatenate([p[2] for p in parts]),
    )


def export_peaks(peaks: PeakSet, grid: Grid, path: str | Path | None) -> None:
    if path is None:
        return

    with Path(path).open('w', newline='', encoding='utf-8') as out:
        n_rows = write_peaks_csv(peaks.samples(grid), out)

    logger.info(f'wrote {n_rows} peak samples to {path}')


def _seed(seed: int | None) -> int:
    return get_settings().seed if seed is None else seed


def _grid_1d(length: float, step: float) -> Grid1D:
    return Grid1D(origin=0.0, step=step, n_points=int(round(length / step)) + 1)


@log_exec_time('stationary 1D campaign')
def run_stationary_1d(
    *,
    kappa_offset: float = 0.0,
    n_paths: int = 1000,
    length: float = 20.0,
    step: float = 0.01,
    threshold: float = 0.03,
    min_peaks: int = 2000,
    seed: int | None = None,
    workers: int = 1,
    peaks_csv: str | Path | None = None,
) -> ValidationReport:
    """
    Squared-exponential paths against the stationary formula at κ + kappa_offset;
    a non-zero offset is the negative control.
    """
    seed = _seed(seed)
    cov = squared_exponential_1d()
    grid = _grid_1d(length, step)
    sampler = PathSampler1D(cov, grid)

    peaks = _collect_peaks(sampler.sample, 1, n_paths, normal_stream(seed, 0), workers)
    export_peaks(peaks, grid, peaks_csv)
    heights = peaks.heights
    _require_peaks(heights.size, min_peaks)

    kappa = cov.kappa + kappa_offset
    ks = ks_distance(empirical_cdf(heights), lambda u: peak_tail_stationary_1d(kappa, u))
    return ValidationReport(
        family='process1d-stationary',
        n_peaks=heights.size,
        ks=ks.statistic,
        threshold=threshold,
        passed=ks.statistic < threshold,
        seed=seed,
        grid={'step': step, 'length': length, 'n_paths': n_paths},
        details={'kappa': kappa},
    )


@log_exec_time('time-warped 1D campaign')
def run_warped_1d(
    *,
    amplitude: float = 0.3,
    n_paths: int = 1000,
    length: float = 20.0,
    step: float = 0.01,
    threshold: float = 0.03,
    min_peaks: int = 2000,
    seed: int | None = None,
    workers: int = 1,
    peaks_csv: str | Path | None = None,
) -> ValidationReport:
    """Warped paths share ρ = −1/√3 at every t, so all peaks pool into one KS test."""
    seed = _seed(seed)
    cov = time_warped_1d(amplitude)
    grid = _grid_1d(length, step)

    rhos = [conditional_rho(spectral_moments_1d(cov, t)).rho for t in (0.0, 1.0, 2.0)]
    rho = conditional_rho(cov.triple(0.0)).rho

    sampler = PathSampler1D(cov, grid)
    peaks = _collect_peaks(sampler.sample, 1, n_paths, normal_stream(seed, 1), workers)
    export_peaks(peaks, grid, peaks_csv)
    heights = peaks.heights
    _require_peaks(heights.size, min_peaks)

    ks = ks_distance(empirical_cdf(heights), lambda u: peak_tail_1d(rho, u))
    return ValidationReport(
        family='process1d-warped',
        n_peaks=heights.size,
        ks=ks.statistic,
        threshold=threshold,
        passed=ks.statistic < threshold,
        seed=seed,
        grid={'step': step, 'length': length, 'n_paths': n_paths},
        details={'rho': rho, 'rho_finite_difference': rhos},
    )


@log_exec_time('amplitude-mixture 1D campaign')
def run_amplitude_mixture_1d(
    *,
    n_paths: int = 3200,
    length: float = 20.0,
    step: float = 0.01,
    bin_width: float = 1.0,
    max_rho_spread: float = 0.02,
    threshold: float = 0.06,
    min_peaks_per_bin: int = 400,
    seed: int | None = None,
    workers: int = 1,
    peaks_csv: str | Path | None = None,
) -> ValidationReport:
    """
    Peaks binned by location; only bins where ρ(t) moves by less than max_rho_spread
    are tested, each against F at the bin center. Passes when every bin passes.
    """
    seed = _seed(seed)
    cov = amplitude_mixture_1d()
    grid = _grid_1d(length, step)
    sampler = PathSampler1D(cov, grid)

    peaks = _collect_peaks(sampler.sample, 1, n_paths, normal_stream(seed, 2), workers)
    export_peaks(peaks, grid, peaks_csv)
    heights = peaks.heights
    locations = grid.points[peaks.index[:, 0]]

    bins = []
    edges = np.arange(0.0, length + 0.5 * bin_width, bin_width)

    for lo, hi in zip(edges[:-1], edges[1:], strict=True):
        rho_lo, rho_mid, rho_hi = (
            conditional_rho(cov.triple(float(t))).rho for t in (lo, 0.5 * (lo + hi), hi)
        )
        if max(rho_lo, rho_mid, rho_hi) - min(rho_lo, rho_mid, rho_hi) >= max_rho_spread:
            continue

        in_bin = heights[(locations >= lo) & (locations < hi)]
        _require_peaks(in_bin.size, min_peaks_per_bin)
        ks = ks_distance(empirical_cdf(in_bin), lambda u, r=rho_mid: peak_tail_1d(r, u))
        bins.append({'lo': lo, 'hi': hi, 'rho': rho_mid, 'n_peaks': in_bin.size, 'ks': ks.statistic})

    if not bins:
        raise InvalidParameterError(f'no location bin has a rho spread below {max_rho_spread}')

    worst = max(b['ks'] for b in bins)
    return ValidationReport(
        family='process1d-mixture',
        n_peaks=sum(b['n_peaks'] for b in bins),
        ks=worst,
        threshold=threshold,
        passed=worst < threshold,
        seed=seed,
        grid={'step': step, 'length': length, 'n_paths': n_paths, 'bin_width': bin_width},
        details={'bins': bins},
    )


@log_exec_time('grid refinement campaign')
def run_grid_refinement(
    *,
    n_paths: int = 1000,
    length: float = 20.0,
    step: float = 0.01,
    seed: int | None = None,
    workers: int = 1,
) -> ValidationReport:
    """
    KS of the stationary formula on the fine grid and on every second point of the
    same paths; passes when refinement does not increase the distance beyond
    sampling slack.
    """
    seed = _seed(seed)
    cov = squared_exponential_1d()
    grid = _grid_1d(length, step)
    sampler = PathSampler1D(cov, grid)

    def tail(u):
        return peak_tail_stationary_1d(cov.kappa, u)

    fine, coarse = [], []
    counts = split_counts(n_paths, get_settings().mc_chunks)
    stream = normal_stream(seed, 3)

    def run_chunk(j: int) -> tuple[FloatArray, FloatArray]:
        paths = sampler.sample(stream.spawn(j), counts[j])
        sub = paths[:, ::2]
        return paths[_peak_mask(paths, 1)], sub[_peak_mask(sub, 1)]

    for f, c in map_chunks(run_chunk, len(counts), workers):
        fine.append(f)
        coarse.append(c)

    ks_fine = ks_distance(empirical_cdf(np.concatenate(fine)), tail)
    ks_coarse = ks_distance(empirical_cdf(np.concatenate(coarse)), tail)
    slack = 0.005
    return ValidationReport(
        family='process1d-refinement',
        n_peaks=ks_fine.n_samples,
        ks=ks_fine.statistic,
        threshold=ks_coarse.statistic + slack,
        passed=ks_fine.statistic <= ks_coarse.statistic + slack,
        seed=seed,
        grid={'step': step, 'coarse_step': 2 * step, 'length': length, 'n_paths': n_paths},
        details={'ks_coarse': ks_coarse.statistic, 'n_peaks_coarse': ks_coarse.n_samples},
    )


def planar_tail_interpolator(
    spec: PlanarSpec,
    cfg: QuadConfig | None = None,
    lo: float = -4.0,
    hi: float = 6.0,
    step: float = 0.05,
) -> TailFunction:
    """Linear interpolation of a tabulated planar F; clamps to the end values."""
    grid = np.arange(lo, hi + 0.5 * step, step)
    table = peak_tail_planar_table(spec, grid, cfg)

    def tail(u):
        return np.interp(u, grid, table)

    return tail


@log_exec_time('planar campaign')
def run_planar(
    *,
    ell: tuple[float, float] = (1.0, 2.0),
    n_points: int = 512,
    step_per_length: float = 0.05,
    n_fields: int = 32,
    threshold: float = 0.05,
    min_peaks: int = 1500,
    seed: int | None = None,
    workers: int = 1,
    cfg: QuadConfig | None = None,
    peaks_csv: str | Path | None = None,
) -> ValidationReport:
    """
    Separable Gaussian covariance on an n_points² grid by circulant embedding; the
    theoretical F comes from the PlanarSpec obtained by rescaling to unit gradient covariance.
    """
    seed = _seed(seed)
    cov = separable_gaussian_2d(*ell)
    spec = rescale_to_unit_gradient(planar_spec_from_covariance(cov.cov))
    grid = Grid2D(
        step=(step_per_length * ell[0], step_per_length * ell[1]),
        n_points=(n_points, n_points),
    )
    embedding = CirculantEmbedding2D(cov, grid)

    peaks = _collect_peaks(embedding.sample, 2, n_fields, normal_stream(seed, 4), workers)
    export_peaks(peaks, grid, peaks_csv)
    heights = peaks.heights
    _require_peaks(heights.size, min_peaks)

    ks = ks_distance(empirical_cdf(heights), planar_tail_interpolator(spec, cfg))
    return ValidationReport(
        family='planar',
        n_peaks=heights.size,
        ks=ks.statistic,
        threshold=threshold,
        passed=ks.statistic < threshold,
        seed=seed,
        grid={'step': list(grid.step), 'n_points': list(grid.n_points), 'n_fields': n_fields},
        details={'spec': spec.model_dump(), 'padding': embedding.padding},
    )


def cosine_period_grid(spec: CosineSpec, points_per_period: int) -> Grid:
    """One full period per axis plus one guard point on each side."""
    steps = [2.0 * math.pi / (w * points_per_period) for w in spec.omegas]
    n = points_per_period + 2

    if spec.n_dim == 1:
        return Grid1D(origin=-steps[0], step=steps[0], n_points=n)

    return Grid2D(origin=(-steps[0], -steps[1]), step=(steps[0], steps[1]), n_points=(n, n))


def cosine_peaks(
    spec: CosineSpec,
    n_draws: int,
    stream: RandomStream,
    points_per_period: int,
    workers: int = 1,
) -> PeakSet:
    grid = cosine_period_grid(spec, points_per_period)

    def sample(sub: RandomStream, count: int) -> FloatArray:
        return simulate_cosine(spec, grid, sub, count)

    return _collect_peaks(sample, spec.n_dim, n_draws, stream, workers)


@log_exec_time('cosine campaign')
def run_cosine(
    *,
    n_dim: int = 1,
    omegas: Sequence[float] | None = None,
    n_draws: int = 4000,
    points_per_period: int | None = None,
    threshold: float = 0.03,
    min_peaks: int = 3000,
    seed: int | None = None,
    workers: int = 1,
    peaks_csv: str | Path | None = None,
) -> ValidationReport:
    """
    Every period cell of a cosine field holds exactly one maximum, so each draw
    contributes one independent peak.
    """
    seed = _seed(seed)
    spec = CosineSpec(n_dim=n_dim, omegas=tuple(omegas or (1.0,) * n_dim))
    points = points_per_period or (400 if n_dim == 1 else 200)

    peaks = cosine_peaks(spec, n_draws, normal_stream(seed, 5), points, workers)
    export_peaks(peaks, cosine_period_grid(spec, points), peaks_csv)
    heights = peaks.heights
    _require_peaks(heights.size, min_peaks)

    ks = ks_distance(empirical_cdf(heights), cosine_tail_function(n_dim))
    return ValidationReport(
        family='cosine',
        n_peaks=heights.size,
        ks=ks.statistic,
        threshold=threshold,
        passed=ks.statistic < threshold,
        seed=seed,
        grid={'points_per_period': points, 'n_draws': n_draws},
        details={'omegas': list(spec.omegas), 'min_height': float(heights.min())},
    )


@log_exec_time('cosine frequency invariance campaign')
def run_cosine_frequency_invariance(
    *,
    omegas: tuple[float, float] = (1.0, 2.5),
    n_draws: int = 4000,
    points_per_period: int = 200,
    threshold: float = 0.03,
    seed: int | None = None,
    workers: int = 1,
) -> ValidationReport:
    """Two-sample KS between peak heights at the given frequencies and at ω = 1."""
    seed = _seed(seed)
    target = CosineSpec(n_dim=2, omegas=omegas)
    reference = CosineSpec.unit(2)

    a = cosine_peaks(target, n_draws, normal_stream(seed, 6), points_per_period, workers)
    b = cosine_peaks(reference, n_draws, normal_stream(seed, 7), points_per_period, workers)
    _require_peaks(min(a.size, b.size), MIN_KS_SAMPLES)

    ks = ks_two_sample(empirical_cdf(a.heights), empirical_cdf(b.heights))
    return ValidationReport(
        family='cosine-frequency-invariance',
        n_peaks=a.size + b.size,
        ks=ks.statistic,
        threshold=threshold,
        passed=ks.statistic < threshold,
        seed=seed,
        grid={'points_per_period': points_per_period, 'n_draws': n_draws},
        details={'omegas': list(omegas)},
    )


def write_peaks_csv(peaks: Iterable[PeakSample], out: TextIO) -> int:
    """Rows: replication, location coordinates, height. Returns the row count."""
    peaks = list(peaks)
    n_coords = len(peaks[0].location) if peaks else 1
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(['replication', *(f'location{k + 1}' for k in range(n_coords)), 'height'])

    for p in peaks:
        writer.writerow(
            [p.replication, *(format(x, '.17g') for x in p.location), format(p.height, '.17g')],
        )

    return len(peaks)
