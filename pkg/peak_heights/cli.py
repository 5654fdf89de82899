"""
Command line front end.

    peak-heights eval --family process1d --rho -0.5 --grid -3:3:0.5
    peak-heights eval --family aniso --n 2 --kappa 1 --u 0 --seed 7
    peak-heights validate --family cosine --n 1
    peak-heights selftest

Standard output carries only tables and reports; logs go to standard error.
"""

import argparse
import csv
import io
import json
import math
import sys
from collections.abc import Callable, Sequence
from importlib import metadata
from pathlib import Path
from typing import Any, Literal

import numpy as np
import scipy
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from peak_heights import __version__, validate
from peak_heights.cosine import (
    peak_tail_cosine,
    peak_tail_cosine_mc,
    peak_tail_cosine_quad,
)
from peak_heights.decorators import log_exec_time, log_if_errors
from peak_heights.exceptions import InvalidParameterError, OutputAssertionError, PeakHeightError
from peak_heights.numerics import (
    QuadConfig,
    expect_bivariate,
    integrate_1d,
    normal_stream,
    std_normal_cdf,
    std_normal_pdf,
)
from peak_heights.planar import (
    PlanarSpec,
    RawPlanarSpec,
    isotropic_planar_spec,
    peak_density_planar,
    peak_tail_planar,
    peak_tail_planar_table,
    rescale_to_unit_gradient,
)
from peak_heights.process1d import (
    SpectralTriple1D,
    conditional_rho,
    peak_density_1d,
    peak_tail_1d,
    peak_tail_stationary_1d,
    rho_from_kappa,
    stationary_kappa,
)
from peak_heights.rmt import (
    AnisoSpec,
    Branch,
    expect_goi,
    half_normal_mean,
    peak_density_aniso,
    peak_tail_aniso,
)
from peak_heights.settings import PeakSettings, get_settings

Family = Literal['process1d', 'planar', 'cosine', 'aniso']
CampaignName = Literal[
    'process1d',
    'process1d-warped',
    'process1d-mixture',
    'refinement',
    'planar',
    'cosine',
    'cosine-invariance',
]

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INVALID = 2
MONOTONE_ATOL = 1e-10


class GridSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    min: float
    max: float
    step: float

    @model_validator(mode='after')
    def _check_grid(self) -> 'GridSpec':
        if not self.min < self.max:
            raise ValueError(f'grid min < max violated: {self.min} >= {self.max}')
        if not self.step > 0:
            raise ValueError(f'grid step > 0 violated: {self.step}')
        return self

    @classmethod
    def parse(cls, text: str) -> 'GridSpec':
        parts = text.split(':')
        if len(parts) != 3:
            raise ValueError(f'grid must look like MIN:MAX:STEP, got {text!r}')
        lo, hi, step = (float(p) for p in parts)
        return cls(min=lo, max=hi, step=step)

    def points(self) -> np.ndarray:
        n = int(math.floor((self.max - self.min) / self.step + 1e-9)) + 1
        return self.min + self.step * np.arange(n)


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    family: Family
    grid: GridSpec | None = None
    u: float | None = None
    format: Literal['csv', 'json'] = 'csv'
    out: str | None = None

    seed: int = Field(default_factory=lambda: get_settings().seed, ge=0)
    samples: int = Field(default_factory=lambda: get_settings().n_samples, ge=1)
    workers: int = Field(default_factory=lambda: get_settings().workers, ge=1)
    abs_tol: float = Field(default_factory=lambda: get_settings().abs_tol, gt=0)
    rel_tol: float = Field(default_factory=lambda: get_settings().rel_tol, gt=0)
    method: Literal['auto', 'quad', 'mc'] = 'auto'

    rho: float | None = None
    kappa: float | None = None
    sigma1_sq: float | None = None
    sigma2_sq: float | None = None
    sigma3_sq: float | None = None
    gamma1: float | None = None
    gamma2: float | None = None
    n: int | None = Field(None, ge=1)
    omegas: tuple[float, ...] | None = None
    phi1: float | None = None
    phi2: float | None = None
    a_matrix: tuple[tuple[float, ...], ...] | None = None

    @field_validator('grid', mode='before')
    @classmethod
    def _parse_grid(cls, v: Any) -> Any:
        return GridSpec.parse(v) if isinstance(v, str) else v

    @model_validator(mode='after')
    def _check_points(self) -> 'RunConfig':
        if (self.grid is None) == (self.u is None):
            raise ValueError('exactly one of grid and u must be given')
        return self

    def points(self) -> np.ndarray:
        return np.array([self.u]) if self.grid is None else self.grid.points()

    def quad(self) -> QuadConfig:
        base = QuadConfig.from_settings(get_settings())
        return base.model_copy(update={'abs_tol': self.abs_tol, 'rel_tol': self.rel_tol})

    def require(self, *names: str) -> None:
        missing = [name for name in names if getattr(self, name) is None]
        if missing:
            raise InvalidParameterError(
                f'family {self.family} needs ' + ', '.join(f'--{m.replace("_", "-")}' for m in missing),
            )


def _versions() -> dict[str, str]:
    try:
        package = metadata.version('peak-heights')
    except metadata.PackageNotFoundError:
        package = __version__
    return {'peak-heights': package, 'numpy': np.__version__, 'scipy': scipy.__version__}


def _process1d_rho(cfg: RunConfig) -> float:
    if cfg.rho is not None:
        return cfg.rho
    if cfg.kappa is not None:
        return rho_from_kappa(cfg.kappa).rho
    if cfg.phi1 is not None and cfg.phi2 is not None:
        return rho_from_kappa(stationary_kappa(cfg.phi1, cfg.phi2)).rho
    raise InvalidParameterError('family process1d needs --rho, --kappa or --phi1/--phi2')


def _planar_spec(cfg: RunConfig) -> PlanarSpec:
    cfg.require('sigma1_sq', 'sigma2_sq', 'sigma3_sq')

    if cfg.gamma1 is None and cfg.gamma2 is None:
        return PlanarSpec(sigma1_sq=cfg.sigma1_sq, sigma2_sq=cfg.sigma2_sq, sigma3_sq=cfg.sigma3_sq)

    raw = RawPlanarSpec(
        gamma1_sq=(cfg.gamma1 or 1.0) ** 2,
        gamma2_sq=(cfg.gamma2 or 1.0) ** 2,
        sigma1_sq=cfg.sigma1_sq,
        sigma2_sq=cfg.sigma2_sq,
        sigma3_sq=cfg.sigma3_sq,
    )
    return rescale_to_unit_gradient(raw)


def _aniso_spec(cfg: RunConfig) -> AnisoSpec:
    cfg.require('n')

    if cfg.phi1 is not None and cfg.phi2 is not None:
        phi1, phi2 = cfg.phi1, cfg.phi2
    elif cfg.kappa is not None:
        phi1, phi2 = -cfg.kappa / 2.0, 0.25
    else:
        raise InvalidParameterError('family aniso needs --kappa or --phi1/--phi2')

    identity = tuple(tuple(float(i == j) for j in range(cfg.n)) for i in range(cfg.n))
    return AnisoSpec(n_dim=cfg.n, a_matrix=cfg.a_matrix or identity, phi1=phi1, phi2=phi2)


def _eval_rows(cfg: RunConfig) -> tuple[list[str], list[list[float]], bool]:
    """Column names, rows and whether F carries Monte-Carlo error."""
    us = cfg.points()
    quad = cfg.quad()

    if cfg.family == 'process1d':
        rho = _process1d_rho(cfg)
        tail, dens = np.atleast_1d(peak_tail_1d(rho, us)), np.atleast_1d(peak_density_1d(rho, us))
        return ['u', 'F', 'h'], [[u, f, h] for u, f, h in zip(us, tail, dens, strict=True)], False

    if cfg.family == 'planar':
        spec = _planar_spec(cfg)
        tail = peak_tail_planar_table(spec, us, quad) if us.size > 1 else [peak_tail_planar(spec, us[0], quad)]
        dens = np.atleast_1d(peak_density_planar(spec, us, quad))
        return ['u', 'F', 'h'], [[u, f, h] for u, f, h in zip(us, tail, dens, strict=True)], False

    if cfg.family == 'cosine':
        cfg.require('n')
        estimates = [
            peak_tail_cosine(
                cfg.n,
                float(u),
                method=cfg.method,
                n_samples=cfg.samples,
                stream=normal_stream(cfg.seed),
                cfg=quad,
                workers=cfg.workers,
            )
            for u in us
        ]
        if all(e.stderr == 0.0 for e in estimates) and cfg.method != 'mc':
            return ['u', 'F'], [[u, e.value] for u, e in zip(us, estimates, strict=True)], False
        rows = [[u, e.value, e.stderr] for u, e in zip(us, estimates, strict=True)]
        return ['u', 'F', 'F_stderr'], rows, True

    spec = _aniso_spec(cfg)
    kw = {'n_samples': cfg.samples, 'cfg': quad, 'workers': cfg.workers}
    rows = []

    for u in us:
        tail = peak_tail_aniso(spec, float(u), stream=normal_stream(cfg.seed), **kw)
        row = [u, tail.value, tail.stderr]
        if spec.info.branch is Branch.SUBCRITICAL:
            dens = peak_density_aniso(spec, float(u), stream=normal_stream(cfg.seed), **kw)
            row += [dens.value, dens.stderr]
        rows.append(row)

    columns = ['u', 'F', 'F_stderr']
    if spec.info.branch is Branch.SUBCRITICAL:
        columns += ['h', 'h_stderr']
    return columns, rows, True


def _render(cfg: RunConfig, columns: list[str], rows: list[list[float]]) -> str:
    if cfg.format == 'csv':
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(columns)
        writer.writerows([[format(float(v), '.17g') for v in row] for row in rows])
        return buffer.getvalue()

    payload = {
        'meta': {
            'config': cfg.model_dump(mode='json', exclude_none=True),
            'seed': cfg.seed,
            'versions': _versions(),
        },
        'rows': [dict(zip(columns, map(float, row), strict=True)) for row in rows],
    }
    return json.dumps(payload, indent=2) + '\n'


def _write(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return

    Path(out).write_text(text, encoding='utf-8')


def check_monotone(columns: list[str], rows: list[list[float]], stochastic: bool) -> None:
    """F must be nonincreasing; Monte-Carlo columns within 3 combined standard errors."""
    f_col = columns.index('F')
    se_col = columns.index('F_stderr') if stochastic else None

    for prev, cur in zip(rows, rows[1:], strict=False):
        slack = MONOTONE_ATOL
        if se_col is not None:
            slack += 3.0 * (prev[se_col] + cur[se_col])
        if cur[f_col] > prev[f_col] + slack:
            raise OutputAssertionError(
                f'F is not monotone: F({cur[0]}) = {cur[f_col]} > F({prev[0]}) = {prev[f_col]}',
            )


@log_if_errors()
def cmd_eval(cfg: RunConfig) -> int:
    columns, rows, stochastic = _eval_rows(cfg)
    _write(_render(cfg, columns, rows), cfg.out)
    check_monotone(columns, rows, stochastic)
    return EXIT_OK


def _campaigns(args: argparse.Namespace) -> dict[str, Callable[[], validate.ValidationReport]]:
    common = {'seed': args.seed, 'workers': args.workers or 1}
    export = {'peaks_csv': args.peaks_csv}

    if args.peaks_csv and args.family in {'refinement', 'cosine-invariance'}:
        raise InvalidParameterError(f'--peaks-csv is not available for the {args.family} campaign')

    n_dim = args.n or 1
    omegas = _parse_floats(args.omegas) if args.omegas else None
    return {
        'process1d': lambda: validate.run_stationary_1d(
            kappa_offset=args.kappa_offset or 0.0, **common, **export,
        ),
        'process1d-warped': lambda: validate.run_warped_1d(**common, **export),
        'process1d-mixture': lambda: validate.run_amplitude_mixture_1d(**common, **export),
        'refinement': lambda: validate.run_grid_refinement(**common),
        'planar': lambda: validate.run_planar(**common, **export),
        'cosine': lambda: validate.run_cosine(n_dim=n_dim, omegas=omegas, **common, **export),
        'cosine-invariance': lambda: validate.run_cosine_frequency_invariance(
            omegas=tuple(omegas) if omegas else (1.0, 2.5),
            **common,
        ),
    }


@log_if_errors()
def cmd_validate(args: argparse.Namespace) -> int:
    report = _campaigns(args)[args.family]()
    _write(report.model_dump_json(indent=2) + '\n', args.out)
    return EXIT_OK if report.passed else EXIT_FAIL


def _selftest_checks() -> list[tuple[str, Callable[[], bool]]]:
    quad = QuadConfig.from_settings(get_settings())
    stream = normal_stream(get_settings().seed)

    def stationary_equivalence() -> bool:
        us = np.round(np.arange(-4.0, 4.05, 0.1), 10)
        gap = max(
            float(np.max(np.abs(peak_tail_stationary_1d(k, us) - peak_tail_1d(-k / math.sqrt(3.0), us))))
            for k in (0.3, 1.0, 1.6)
        )
        return gap < 1e-12

    def process1d_normalization() -> bool:
        return all(
            abs(integrate_1d(lambda x, r=r: peak_density_1d(r, x), -math.inf, math.inf, quad) - 1.0) < 1e-8
            for r in (-0.1, -0.5, -0.9)
        )

    def planar_normalization() -> bool:
        spec = PlanarSpec(sigma1_sq=4.0, sigma2_sq=2.25, sigma3_sq=1.5)
        return abs(peak_tail_planar(spec, -quad.truncation_radius, quad) - 1.0) < 1e-6

    def cosine_quad_vs_mc() -> bool:
        mc = peak_tail_cosine_mc(2, 1.0, 200_000, stream.spawn(10))
        return mc.agrees_with(peak_tail_cosine_quad(2, 1.0, quad), n_sigma=4.0)

    def goi_half_normal() -> bool:
        est = expect_goi(lambda lam: np.abs(lam[:, 0]) * (lam[:, 0] < 0), 1, 0.5, 200_000, stream.spawn(11))
        return est.agrees_with(half_normal_mean(1.5), n_sigma=4.0)

    def goi_normalization() -> bool:
        return all(
            expect_goi(lambda lam: np.ones(lam.shape[0]), 3, c, 100_000, stream.spawn(12)).agrees_with(
                1.0,
                n_sigma=4.0,
            )
            for c in (-0.2, 0.0, 0.5)
        )

    def aniso_matches_1d() -> bool:
        spec = AnisoSpec.isotropic(1, 1.0)
        return all(
            peak_tail_aniso(spec, u, 200_000, stream.spawn(13), quad).agrees_with(
                float(peak_tail_stationary_1d(1.0, u)),
                n_sigma=4.0,
            )
            for u in (0.0, 1.0, 2.0)
        )

    def aniso_matches_planar() -> bool:
        est = peak_tail_aniso(AnisoSpec.isotropic(2, 1.0), 0.0, 200_000, stream.spawn(14), quad)
        planar = peak_tail_planar(isotropic_planar_spec(1.0), 0.0, quad)
        return est.agrees_with(planar, n_sigma=4.0, atol=1e-5)

    return [
        ('phi(0) = 1/sqrt(2 pi)', lambda: abs(std_normal_pdf(0.0) - 0.3989422804014327) < 1e-15),
        ('Phi(x) + Phi(-x) = 1', lambda: abs(std_normal_cdf(1.7) + std_normal_cdf(-1.7) - 1.0) < 1e-15),
        ('E_rho[Z1 Z2] = rho', lambda: abs(expect_bivariate(lambda a, b: a * b, 0.37, quad) - 0.37) < 1e-10),
        (
            'conditional rho, stationary triple',
            lambda: abs(conditional_rho(SpectralTriple1D(lambda1=1, lambda2=3)).rho + 1 / math.sqrt(3)) < 1e-15,
        ),
        ('F_1d(rho=-0.5, 0) = 0.75', lambda: abs(peak_tail_1d(-0.5, 0.0) - 0.75) < 1e-15),
        ('stationary = nonstationary at rho = -kappa/sqrt3', stationary_equivalence),
        ('process1d density integrates to 1', process1d_normalization),
        ('planar density integrates to 1', planar_normalization),
        ('cosine N=1 closed form', lambda: abs(peak_tail_cosine_quad(1, 1.0, quad) - math.exp(-0.5)) < 1e-8),
        (
            'cosine F(0+) = 1',
            lambda: all(abs(peak_tail_cosine_quad(n, 1e-9, quad) - 1.0) < 1e-8 for n in (1, 2, 3)),
        ),
        ('cosine quadrature vs Monte Carlo', cosine_quad_vs_mc),
        ('GOI N=1 half-normal mean', goi_half_normal),
        ('GOI normalization', goi_normalization),
        ('aniso N=1 = stationary 1D', aniso_matches_1d),
        ('aniso N=2 = planar (3, 3, 1)', aniso_matches_planar),
    ]


@log_exec_time('selftest')
def cmd_selftest(out: str | None = None) -> int:
    lines = []
    failures = 0

    for name, check in _selftest_checks():
        try:
            ok = bool(check())
        except PeakHeightError as e:
            logger.error(f'selftest "{name}" raised: {e.message}')
            ok = False

        failures += not ok
        lines.append(f'{"PASS" if ok else "FAIL"}  {name}')

    lines.append(f'{len(lines) - failures} passed, {failures} failed')
    _write('\n'.join(lines) + '\n', out)
    return EXIT_OK if failures == 0 else EXIT_FAIL


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(',') if v.strip()]


def _parse_matrix(text: str) -> list[list[float]]:
    return [_parse_floats(row) for row in text.split(';') if row.strip()]


def _join_dash_values(argv: Sequence[str]) -> list[str]:
    """`--grid -3:3:0.5` would read as an option to argparse; glue such values on."""
    argv = list(argv)
    joined = []
    i = 0

    while i < len(argv):
        if argv[i] in {'--grid', '--a-matrix', '--omegas'} and i + 1 < len(argv):
            joined.append(f'{argv[i]}={argv[i + 1]}')
            i += 2
            continue
        joined.append(argv[i])
        i += 1

    return joined


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='peak-heights', description=__doc__.splitlines()[1])
    sub = parser.add_subparsers(dest='command', required=True)

    ev = sub.add_parser('eval', help='tabulate F(u) and h(u) for one family')
    ev.add_argument('--family', choices=['process1d', 'planar', 'cosine', 'aniso'])
    ev.add_argument('--grid', help='MIN:MAX:STEP')
    ev.add_argument('--u', type=float, help='single evaluation point')
    ev.add_argument('--config', help='JSON file with RunConfig fields; flags win')
    ev.add_argument('--format', choices=['csv', 'json'])
    ev.add_argument('--method', choices=['auto', 'quad', 'mc'])
    for name, kind in (
        ('rho', float),
        ('kappa', float),
        ('sigma1-sq', float),
        ('sigma2-sq', float),
        ('sigma3-sq', float),
        ('gamma1', float),
        ('gamma2', float),
        ('n', int),
        ('phi1', float),
        ('phi2', float),
    ):
        ev.add_argument(f'--{name}', type=kind)
    ev.add_argument('--omegas', help='comma separated frequencies')
    ev.add_argument('--a-matrix', help='rows separated by ";", entries by ","')

    va = sub.add_parser('validate', help='run a simulate-and-count campaign')
    va.add_argument(
        '--family',
        required=True,
        choices=[
            'process1d',
            'process1d-warped',
            'process1d-mixture',
            'refinement',
            'planar',
            'cosine',
            'cosine-invariance',
        ],
    )
    va.add_argument('--kappa-offset', type=float, help='negative control for process1d')
    va.add_argument('--n', type=int)
    va.add_argument('--omegas')
    va.add_argument('--peaks-csv', help='also write every simulated peak (replication, location, height) here')

    st = sub.add_parser('selftest', help='closed-form and cross-family checks')

    for p in (ev, va, st):
        p.add_argument('--out', help='write to this file instead of standard output')
    for p in (ev, va):
        p.add_argument('--seed', type=int)
        p.add_argument('--workers', type=int)
    ev.add_argument('--samples', type=int)

    return parser


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    """Flags win over the JSON config file, which wins over settings."""
    merged: dict[str, Any] = {}

    if args.config:
        merged.update(json.loads(Path(args.config).read_text(encoding='utf-8')))

    flags = {
        k: v
        for k, v in vars(args).items()
        if v is not None and k not in {'command', 'config'}
    }
    if 'omegas' in flags:
        flags['omegas'] = _parse_floats(flags['omegas'])
    if 'a_matrix' in flags:
        flags['a_matrix'] = _parse_matrix(flags['a_matrix'])

    merged.update(flags)
    return RunConfig.model_validate(merged)


def configure_logging(settings: PeakSettings) -> None:
    logger.remove()
    logger.add(sys.stderr, level=settings.log_level.upper())


def main(argv: Sequence[str] | None = None) -> int:
    configure_logging(get_settings())
    args = build_parser().parse_args(_join_dash_values(sys.argv[1:] if argv is None else argv))

    try:
        if args.command == 'eval':
            return cmd_eval(run_config_from_args(args))
        if args.command == 'validate':
            return cmd_validate(args)
        return cmd_selftest(args.out)
    except ValidationError as e:
        logger.error(f'invalid parameters: {e}')
        return EXIT_INVALID
    except PeakHeightError as e:
        return e.exit_code
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f'cannot read or write: {e}')
        return EXIT_FAIL


if __name__ == '__main__':
    sys.exit(main())
