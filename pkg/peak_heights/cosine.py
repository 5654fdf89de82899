"""
Cosine random fields X(t) = N^{-1/2} Σ_k [ζ_k cos(ω_k t_k) + ζ′_k sin(ω_k t_k)].

At a peak the Hessian is diagonal and X = −Σ X_kk/ω_k², so peak heights are
a.s. positive and

    F(u) = (2π)^{N/2} E[(∏|Z_i| 1{Z_i < 0}) 1{Σ Z_i ≤ −√N u}]
         = P(R_1 + … + R_N ≥ √N u),   R_i i.i.d. Rayleigh.

The formula is stated for u ≥ 0; for u < 0 the evaluators return 1.
"""

import math
from functools import partial

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import special

from peak_heights.exceptions import InvalidParameterError
from peak_heights.numerics import (
    EstimateWithError,
    QuadConfig,
    RandomStream,
    _finite,
    integrate_1d,
    map_chunks,
    split_counts,
)
from peak_heights.settings import get_settings
from peak_heights.typings import FloatArray, RealLike, TailFunction

MAX_QUAD_DIM = 4
MIN_MC_SAMPLES = 10_000
_SQRT_PI = math.sqrt(math.pi)


class CosineSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_dim: int = Field(ge=1)
    omegas: tuple[float, ...]

    @model_validator(mode='after')
    def _check_omegas(self) -> 'CosineSpec':
        if len(self.omegas) != self.n_dim:
            raise ValueError(f'expected {self.n_dim} frequencies, got {len(self.omegas)}')
        if not all(w > 0.0 and math.isfinite(w) for w in self.omegas):
            raise ValueError(f'every frequency must satisfy omega_k > 0, got {self.omegas}')
        return self

    @classmethod
    def unit(cls, n_dim: int) -> 'CosineSpec':
        return cls(n_dim=n_dim, omegas=(1.0,) * n_dim)


def _survival(k: int, s: FloatArray, cfg: QuadConfig) -> FloatArray:
    """G_k(s) = P(R_1 + … + R_k ≥ s), vectorized over s."""
    s = np.asarray(s, dtype=float)
    pos = np.maximum(s, 0.0)

    if k == 1:
        return np.exp(-0.5 * pos * pos)

    if k == 2:
        return np.exp(-0.5 * pos * pos) + 0.5 * _SQRT_PI * pos * np.exp(
            -0.25 * pos * pos,
        ) * special.erf(0.5 * pos)

    out = np.ones_like(s)
    flat = out.reshape(-1)

    for idx, si in enumerate(s.reshape(-1)):
        if si > 0.0:
            integrand = partial(_convolution_integrand, k=k, s=float(si), cfg=cfg)
            flat[idx] = math.exp(-0.5 * si * si) + integrate_1d(integrand, 0.0, float(si), cfg)

    return out


def _convolution_integrand(r: FloatArray, *, k: int, s: float, cfg: QuadConfig) -> FloatArray:
    return r * np.exp(-0.5 * r * r) * _survival(k - 1, s - r, cfg)


def _check_dim(n_dim: int) -> None:
    if n_dim < 1:
        raise InvalidParameterError(f'dimension must be >= 1, got {n_dim}')


def peak_tail_cosine_quad(n_dim: int, u: float, cfg: QuadConfig | None = None) -> float:
    """
    Nested quadrature over the Rayleigh convolution; the two innermost levels are
    closed form. Only N <= MAX_QUAD_DIM; peak_tail_cosine picks Monte Carlo above that.
    """
    _check_dim(n_dim)

    if n_dim > MAX_QUAD_DIM:
        raise InvalidParameterError(
            f'nested quadrature supports N <= {MAX_QUAD_DIM}, got N={n_dim}; '
            "call peak_tail_cosine(n_dim, u) (method 'auto' or 'mc') for higher dimensions",
        )

    cfg = cfg or QuadConfig()
    u = float(_finite(u, 'u'))

    if u <= 0.0:
        return 1.0

    return float(_survival(n_dim, np.array(math.sqrt(n_dim) * u), cfg))


def cosine_tail_function(n_dim: int, cfg: QuadConfig | None = None) -> TailFunction:
    """Vectorized F for N <= 4, e.g. to compare against thousands of simulated peaks."""
    _check_dim(n_dim)

    if n_dim > MAX_QUAD_DIM:
        raise InvalidParameterError(
            f'tail function by quadrature needs N <= {MAX_QUAD_DIM}, got N={n_dim}; '
            'estimate single points with peak_tail_cosine(n_dim, u) instead',
        )

    cfg = cfg or QuadConfig()

    def tail(u: FloatArray) -> FloatArray:
        u = np.asarray(u, dtype=float)
        return _survival(n_dim, math.sqrt(n_dim) * u, cfg)

    return tail


def _mc_terms(n_dim: int, threshold: float, count: int, stream: RandomStream) -> FloatArray:
    w = np.abs(stream.standard_normal((count, n_dim)))
    prefactor = (math.pi / 2.0) ** (n_dim / 2.0)
    return prefactor * np.prod(w, axis=1) * (w.sum(axis=1) >= threshold)


def peak_tail_cosine_mc(
    n_dim: int,
    u: float,
    n_samples: int,
    stream: RandomStream,
    *,
    n_chunks: int | None = None,
    workers: int = 1,
) -> EstimateWithError:
    """
    F(u) = (π/2)^{N/2} E[∏W_i 1{ΣW_i ≥ √N u}] with W_i = |Z_i| half-normal; this is
    the orthant form with the 2^{-N} orthant probability absorbed.
    """
    _check_dim(n_dim)

    if n_samples < MIN_MC_SAMPLES:
        raise InvalidParameterError(f'n_samples must be >= {MIN_MC_SAMPLES}, got {n_samples}')

    u = float(_finite(u, 'u'))

    if u < 0.0:
        return EstimateWithError(value=1.0, stderr=0.0, n_samples=n_samples)

    counts = split_counts(n_samples, n_chunks or get_settings().mc_chunks)
    threshold = math.sqrt(n_dim) * u

    def run_chunk(j: int) -> FloatArray:
        return _mc_terms(n_dim, threshold, counts[j], stream.spawn(j))

    terms = np.concatenate(map_chunks(run_chunk, len(counts), workers))
    return EstimateWithError.from_terms(terms)


def peak_tail_cosine(
    n_dim: int,
    u: float,
    *,
    method: str = 'auto',
    n_samples: int | None = None,
    stream: RandomStream | None = None,
    cfg: QuadConfig | None = None,
    workers: int = 1,
) -> EstimateWithError:
    """
    Quadrature for N <= 4 (stderr 0), Monte Carlo otherwise or when asked for.
    """
    if method not in {'auto', 'quad', 'mc'}:
        raise InvalidParameterError(f"method must be 'auto', 'quad' or 'mc', got {method!r}")

    if method == 'quad' or (method == 'auto' and n_dim <= MAX_QUAD_DIM):
        value = peak_tail_cosine_quad(n_dim, u, cfg)
        return EstimateWithError(value=value, stderr=0.0, n_samples=1)

    settings = get_settings()
    stream = stream or RandomStream(settings.seed)
    logger.debug(f'cosine N={n_dim} u={u} by Monte Carlo on {stream!r}')
    return peak_tail_cosine_mc(
        n_dim,
        u,
        n_samples or settings.n_samples,
        stream,
        workers=workers,
    )


def _coefficients(spec: CosineSpec, zeta: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
    zeta = _finite(zeta, 'zeta')

    if zeta.shape != (2 * spec.n_dim,):
        raise InvalidParameterError(
            f'expected {2 * spec.n_dim} coefficients (zeta then zeta prime), got shape {zeta.shape}',
        )

    return zeta[: spec.n_dim], zeta[spec.n_dim :], np.asarray(spec.omegas)


def _points(spec: CosineSpec, t: FloatArray) -> FloatArray:
    t = _finite(t, 't')

    if spec.n_dim == 1 and (t.ndim == 0 or t.shape[-1] != 1):
        t = t[..., None]

    if t.shape[-1] != spec.n_dim:
        raise InvalidParameterError(f'points must have {spec.n_dim} coordinates, got shape {t.shape}')

    return t


def cosine_field_eval(spec: CosineSpec, zeta: FloatArray, t: RealLike) -> RealLike:
    """X at one point or at an array of points with trailing axis of length N."""
    a, b, omegas = _coefficients(spec, zeta)
    phase = _points(spec, t) * omegas
    value = (a * np.cos(phase) + b * np.sin(phase)).sum(axis=-1) / math.sqrt(spec.n_dim)
    return value[()]


def cosine_field_hessian(spec: CosineSpec, zeta: FloatArray, t: RealLike) -> FloatArray:
    """Hessian at the given point(s); it is diagonal for every draw."""
    a, b, omegas = _coefficients(spec, zeta)
    phase = _points(spec, t) * omegas
    diag = -(omegas**2) * (a * np.cos(phase) + b * np.sin(phase)) / math.sqrt(spec.n_dim)
    hessian = np.zeros((*diag.shape, spec.n_dim))
    idx = np.arange(spec.n_dim)
    hessian[..., idx, idx] = diag
    return hessian


def cosine_hessian_identity_check(
    spec: CosineSpec,
    zeta: FloatArray,
    t: RealLike,
    atol: float = 1e-12,
) -> bool:
    """−Σ X_kk/ω_k² = X and X_jk = 0 for j ≠ k, at every point."""
    value = np.asarray(cosine_field_eval(spec, zeta, t))
    hessian = cosine_field_hessian(spec, zeta, t)
    omegas_sq = np.asarray(spec.omegas) ** 2

    diag = np.diagonal(hessian, axis1=-2, axis2=-1)
    off_diag = hessian - np.einsum('...i,ij->...ij', diag, np.eye(spec.n_dim))
    trace_ok = np.allclose(-(diag / omegas_sq).sum(axis=-1), value, rtol=0.0, atol=atol)
    return bool(trace_ok and np.all(np.abs(off_diag) <= atol))
