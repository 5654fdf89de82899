"""
Shared numerics: standard normal special functions, deterministic Gauss–Kronrod
adaptive quadrature in one and two dimensions, bivariate-normal expectations and
reproducible counter-based streams of normal variates.
"""

import heapq
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from itertools import count, pairwise
from typing import TypeVar

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import special

from peak_heights.exceptions import InvalidParameterError, QuadratureError
from peak_heights.settings import PeakSettings
from peak_heights.typings import FloatArray, Integrand1D, Integrand2D, RealLike

T = TypeVar('T')

SQRT_2PI = math.sqrt(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)

# QUADPACK qk15 rule: Kronrod abscissae on [0, 1] in descending order, the odd
# entries are the 7-point Gauss abscissae.
_XGK = np.array(
    [
        0.991455371120812639206854697526329,
        0.949107912342758524526189684047851,
        0.864864423359769072789712788640926,
        0.741531185599394439863864773280788,
        0.586087235467691130294144845693013,
        0.405845151377397166906606412076961,
        0.207784955007898467600689403773245,
        0.000000000000000000000000000000000,
    ],
)
_WGK = np.array(
    [
        0.022935322010529224963732008058970,
        0.063092092629978553290700663189204,
        0.104790010322250183839876322541518,
        0.140653259715525918745189590510238,
        0.169004726639267902826583426598550,
        0.190350578064785409913256402421014,
        0.204432940075298892414161999234649,
        0.209482141084727828012999174891714,
    ],
)
_WG = np.array(
    [
        0.129484966168869693270611432679082,
        0.279705391489276667901467771423780,
        0.381830050505118944950369775488975,
        0.417959183673469387755102040816327,
    ],
)

_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_W_KRONROD = np.concatenate([_WGK[:-1], _WGK[::-1]])
_gauss_half = np.zeros(8)
_gauss_half[1::2] = _WG
_W_GAUSS = np.concatenate([_gauss_half[:-1], _gauss_half[::-1]])

_EPS = float(np.finfo(float).eps)
_UFLOW = float(np.finfo(float).tiny)
_INITIAL_CELLS_2D = 4


class QuadConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    abs_tol: float = Field(1e-10, gt=0)
    rel_tol: float = Field(1e-8, gt=0)
    # in standard deviations; Gaussian mass beyond 10 is below 1e-22
    truncation_radius: float = Field(10.0, ge=6)
    max_subdivisions: int = Field(2000, ge=10)

    @classmethod
    def from_settings(cls, settings: PeakSettings) -> 'QuadConfig':
        return cls(
            abs_tol=settings.abs_tol,
            rel_tol=settings.rel_tol,
            truncation_radius=settings.truncation_radius,
            max_subdivisions=settings.max_subdivisions,
        )

    def tolerance(self, value: float) -> float:
        return max(self.abs_tol, self.rel_tol * abs(value))


class BivariateCorrelation(BaseModel):
    model_config = ConfigDict(frozen=True)

    rho: float

    @field_validator('rho')
    @classmethod
    def _check_rho(cls, v: float) -> float:
        if not -1.0 < v < 1.0:
            raise ValueError(f'correlation must satisfy -1 < rho < 1, got {v}')
        return v


class EstimateWithError(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float
    stderr: float = Field(ge=0)
    n_samples: int = Field(ge=1)

    @classmethod
    def from_terms(cls, terms: FloatArray) -> 'EstimateWithError':
        """Mean of the estimator terms with stderr = sample sd / sqrt(n)."""
        terms = np.asarray(terms, dtype=float).ravel()
        n = terms.size

        if n == 0:
            raise InvalidParameterError('cannot estimate from zero terms')

        stderr = float(np.std(terms, ddof=1)) / math.sqrt(n) if n > 1 else 0.0
        return cls(value=float(np.mean(terms)), stderr=stderr, n_samples=n)

    def agrees_with(self, target: float, *, n_sigma: float = 3.0, atol: float = 0.0) -> bool:
        return abs(self.value - target) <= n_sigma * self.stderr + atol


def _finite(x: RealLike, name: str = 'x') -> FloatArray:
    arr = np.asarray(x, dtype=float)

    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError(f'{name} must be finite')

    return arr


def _as_correlation(rho: BivariateCorrelation | float) -> BivariateCorrelation:
    if isinstance(rho, BivariateCorrelation):
        return rho
    return BivariateCorrelation(rho=rho)


def _pdf(x):
    return np.exp(-0.5 * x * x) / SQRT_2PI


def _cdf(x):
    return 0.5 * special.erfc(-x / _SQRT2)


def _tail(x):
    return 0.5 * special.erfc(x / _SQRT2)


def _binorm_pdf(x, y, rho: float):
    one_minus = (1.0 - rho) * (1.0 + rho)
    q = (x * x - 2.0 * rho * x * y + y * y) / (2.0 * one_minus)
    return np.exp(-q) / (2.0 * math.pi * math.sqrt(one_minus))


def std_normal_pdf(x: RealLike) -> RealLike:
    return _pdf(_finite(x))[()]


def std_normal_cdf(x: RealLike) -> RealLike:
    return _cdf(_finite(x))[()]


def std_normal_tail(x: RealLike) -> RealLike:
    """Ψ(x) = 1 − Φ(x) through erfc, so the deep right tail keeps relative accuracy."""
    return _tail(_finite(x))[()]


def bivariate_normal_pdf(
    x: RealLike,
    y: RealLike,
    rho: BivariateCorrelation | float,
) -> RealLike:
    r = _as_correlation(rho).rho
    return _binorm_pdf(_finite(x, 'x'), _finite(y, 'y'), r)[()]


def _quadpack_error(diff: float, resasc: float, resabs: float) -> float:
    err = abs(diff)

    if resasc != 0.0 and err != 0.0:
        err = resasc * min(1.0, (200.0 * err / resasc) ** 1.5)

    if resabs > _UFLOW / (50.0 * _EPS):
        err = max(50.0 * _EPS * resabs, err)

    return err


def _gk15(f: Integrand1D, a: float, b: float) -> tuple[float, float]:
    center = 0.5 * (a + b)
    half = 0.5 * (b - a)
    fx = np.asarray(f(center + half * _NODES), dtype=float)

    resk = float(_W_KRONROD @ fx)
    resg = float(_W_GAUSS @ fx)
    resasc = float(_W_KRONROD @ np.abs(fx - 0.5 * resk))
    resabs = float(_W_KRONROD @ np.abs(fx))

    scale = abs(half)
    err = _quadpack_error((resk - resg) * half, resasc * scale, resabs * scale)
    return resk * half, err


def _gk15_2d(
    f: Integrand2D,
    ax: float,
    bx: float,
    ay: float,
    by: float,
) -> tuple[float, float, int]:
    """Tensor-product 15x15 Kronrod rule; also reports the axis that needs refinement."""
    hx = 0.5 * (bx - ax)
    hy = 0.5 * (by - ay)
    xs = 0.5 * (ax + bx) + hx * _NODES
    ys = 0.5 * (ay + by) + hy * _NODES
    gx, gy = np.meshgrid(xs, ys, indexing='ij')
    fv = np.asarray(f(gx, gy), dtype=float)

    area = hx * hy
    resk = float(_W_KRONROD @ fv @ _W_KRONROD)
    resg = float(_W_GAUSS @ fv @ _W_GAUSS)
    err_x = abs(resk - float(_W_GAUSS @ fv @ _W_KRONROD))
    err_y = abs(resk - float(_W_KRONROD @ fv @ _W_GAUSS))

    resasc = float(_W_KRONROD @ np.abs(fv - 0.25 * resk) @ _W_KRONROD)
    resabs = float(_W_KRONROD @ np.abs(fv) @ _W_KRONROD)
    err = _quadpack_error((resk - resg) * area, resasc * area, resabs * area)

    return resk * area, err, 0 if err_x >= err_y else 1


def _adaptive_1d(f: Integrand1D, a: float, b: float, cfg: QuadConfig) -> float:
    value, err = _gk15(f, a, b)
    heap = [(-err, a, b, value, err)]
    total, total_err = value, err
    n_sub = 1

    while total_err > cfg.tolerance(total):
        if n_sub >= cfg.max_subdivisions:
            raise QuadratureError(
                achieved_error=total_err,
                tolerance=cfg.tolerance(total),
                n_subdivisions=n_sub,
            )

        _, lo, hi, v, e = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)

        if not lo < mid < hi:
            raise QuadratureError(
                achieved_error=total_err,
                tolerance=cfg.tolerance(total),
                n_subdivisions=n_sub,
            )

        v1, e1 = _gk15(f, lo, mid)
        v2, e2 = _gk15(f, mid, hi)
        heapq.heappush(heap, (-e1, lo, mid, v1, e1))
        heapq.heappush(heap, (-e2, mid, hi, v2, e2))

        total += v1 + v2 - v
        total_err += e1 + e2 - e
        n_sub += 1

    return math.fsum(item[3] for item in heap)


def _adaptive_2d(
    f: Integrand2D,
    x_edges: FloatArray,
    y_edges: FloatArray,
    cfg: QuadConfig,
) -> float:
    tie = count()
    heap = []

    for x0, x1 in pairwise(x_edges):
        for y0, y1 in pairwise(y_edges):
            v, e, axis = _gk15_2d(f, x0, x1, y0, y1)
            heap.append((-e, next(tie), (x0, x1, y0, y1), v, e, axis))

    heapq.heapify(heap)
    total = math.fsum(item[3] for item in heap)
    total_err = math.fsum(item[4] for item in heap)
    n_sub = len(heap)

    while total_err > cfg.tolerance(total):
        if n_sub >= cfg.max_subdivisions:
            raise QuadratureError(
                achieved_error=total_err,
                tolerance=cfg.tolerance(total),
                n_subdivisions=n_sub,
            )

        _, _, (x0, x1, y0, y1), v, e, axis = heapq.heappop(heap)

        if axis == 0:
            xm = 0.5 * (x0 + x1)
            halves = [(x0, xm, y0, y1), (xm, x1, y0, y1)]
        else:
            ym = 0.5 * (y0 + y1)
            halves = [(x0, x1, y0, ym), (x0, x1, ym, y1)]

        for cell in halves:
            cv, ce, c_axis = _gk15_2d(f, *cell)
            heapq.heappush(heap, (-ce, next(tie), cell, cv, ce, c_axis))
            total += cv
            total_err += ce

        total -= v
        total_err -= e
        n_sub += 1

    logger.debug(f'2D quadrature converged with {n_sub} cells')
    return math.fsum(item[3] for item in heap)


def _guarded(g: Integrand1D) -> Integrand1D:
    # the variable transforms send nodes near t = 1 to huge abscissae
    def inner(t: FloatArray) -> FloatArray:
        with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
            val = np.asarray(g(t), dtype=float)
        return np.where(np.isfinite(val), val, 0.0)

    return inner


def integrate_1d(
    f: Integrand1D,
    lo: float,
    hi: float,
    cfg: QuadConfig | None = None,
) -> float:
    """
    Adaptive 15-point Gauss–Kronrod quadrature of a vectorized integrand.

    Infinite limits are mapped onto finite ones:
      (a, ∞):  x = a + t/(1−t),   t ∈ [0, 1)
      (−∞, b): x = b − t/(1−t),   t ∈ [0, 1)
      (−∞, ∞): x = t/(1−t²),      t ∈ (−1, 1)
    """
    cfg = cfg or QuadConfig()

    if math.isnan(lo) or math.isnan(hi):
        raise InvalidParameterError('integration limits must not be NaN')

    if lo == hi:
        return 0.0

    if lo > hi:
        return -integrate_1d(f, hi, lo, cfg)

    if math.isfinite(lo) and math.isfinite(hi):
        return _adaptive_1d(f, lo, hi, cfg)

    if math.isfinite(lo):

        def upper_tail(t):
            return f(lo + t / (1.0 - t)) / (1.0 - t) ** 2

        return _adaptive_1d(_guarded(upper_tail), 0.0, 1.0, cfg)

    if math.isfinite(hi):

        def lower_tail(t):
            return f(hi - t / (1.0 - t)) / (1.0 - t) ** 2

        return _adaptive_1d(_guarded(lower_tail), 0.0, 1.0, cfg)

    def whole_line(t):
        one_minus = 1.0 - t * t
        return f(t / one_minus) * (1.0 + t * t) / one_minus**2

    return _adaptive_1d(_guarded(whole_line), -1.0, 1.0, cfg)


def integrate_2d(
    f: Integrand2D,
    x_range: tuple[float, float],
    y_range: tuple[float, float],
    cfg: QuadConfig | None = None,
) -> float:
    """Adaptive tensor-product quadrature over a finite rectangle."""
    cfg = cfg or QuadConfig()
    (x0, x1), (y0, y1) = x_range, y_range

    if not all(map(math.isfinite, (x0, x1, y0, y1))) or x0 >= x1 or y0 >= y1:
        raise InvalidParameterError('integration rectangle must be finite and non-empty')

    x_edges = np.linspace(x0, x1, _INITIAL_CELLS_2D + 1)
    y_edges = np.linspace(y0, y1, _INITIAL_CELLS_2D + 1)
    return _adaptive_2d(f, x_edges, y_edges, cfg)


def expect_bivariate(
    g: Integrand2D,
    rho: BivariateCorrelation | float,
    cfg: QuadConfig | None = None,
    *,
    upper: tuple[float, float] | None = None,
) -> float:
    """
    E_ρ[g(Z₁, Z₂)] by tensor-product adaptive quadrature of g·P_ρ over [−R, R]².

    `upper` declares that g vanishes for z₁ ≥ upper[0] or z₂ ≥ upper[1]; the
    integration box is then clipped there, which keeps the indicator edge on a
    cell boundary.
    """
    cfg = cfg or QuadConfig()
    r = _as_correlation(rho).rho
    radius = cfg.truncation_radius

    ux, uy = radius, radius
    if upper is not None:
        ux, uy = min(radius, upper[0]), min(radius, upper[1])

    if ux <= -radius or uy <= -radius:
        return 0.0

    def integrand(z1: FloatArray, z2: FloatArray) -> FloatArray:
        return g(z1, z2) * _binorm_pdf(z1, z2, r)

    x_edges = np.linspace(-radius, ux, _INITIAL_CELLS_2D + 1)
    y_edges = np.linspace(-radius, uy, _INITIAL_CELLS_2D + 1)
    return _adaptive_2d(integrand, x_edges, y_edges, cfg)


class RandomStream:
    """
    Counter-based (Philox) stream of standard normal variates keyed by a seed and
    a stream key. The same (seed, key) gives the same variates on every platform;
    children from spawn() extend the key, so they never overlap their parent or
    each other.
    """

    def __init__(self, seed: int, key: Sequence[int] = (0,)):
        self.seed = int(seed) % 2**64
        self.key = tuple(int(k) for k in key)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self._generator = np.random.Generator(np.random.Philox(sequence))

    def __repr__(self) -> str:
        return f'RandomStream(seed={self.seed}, key={self.key})'

    @property
    def stream_index(self) -> int:
        return self.key[0]

    def standard_normal(self, size: int | tuple[int, ...]) -> FloatArray:
        return self._generator.standard_normal(size)

    def spawn(self, index: int) -> 'RandomStream':
        return RandomStream(self.seed, (*self.key, index))


def normal_stream(seed: int, stream_index: int = 0) -> RandomStream:
    return RandomStream(seed, (stream_index,))


def split_counts(total: int, n_chunks: int) -> list[int]:
    """Fixed partition of `total` draws; depends on the chunk count only."""
    n_chunks = max(1, min(n_chunks, total))
    base, extra = divmod(total, n_chunks)
    return [base + (1 if i < extra else 0) for i in range(n_chunks)]


def map_chunks(fn: Callable[[int], T], n_chunks: int, workers: int = 1) -> list[T]:
    """Results come back in chunk order whatever the worker count."""
    if workers <= 1 or n_chunks <= 1:
        return [fn(i) for i in range(n_chunks)]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_chunks)))
