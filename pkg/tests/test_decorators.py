import pytest
from pydantic import ValidationError

from peak_heights.decorators import log_exec_time, log_if_errors
from peak_heights.exceptions import (
    DegenerateSpecError,
    InsufficientPeaksError,
    InvalidParameterError,
    PeakHeightError,
    QuadratureError,
)
from peak_heights.settings import get_settings


def test_log_exec_time(log_messages):
    @log_exec_time('campaign')
    def run(x):
        return 2 * x

    assert run(3) == 6
    assert any(m.startswith('INFO "campaign" finished in') for m in log_messages)


def test_log_exec_time_default_label(log_messages):
    @log_exec_time(level='DEBUG')
    def tabulate():
        return None

    tabulate()
    assert any('"tabulate" finished in' in m for m in log_messages)


def test_log_if_errors_domain_error(log_messages):
    @log_if_errors()
    def fail():
        raise InsufficientPeaksError(n_peaks=3, required=200)

    with pytest.raises(InsufficientPeaksError):
        fail()

    (line,) = [m for m in log_messages if m.startswith('ERROR')]
    assert '(exit code 3)' in line
    assert 'Only 3 peaks found' in line
    assert 'Traceback' not in line


def test_log_if_errors_unexpected_error(log_messages):
    @log_if_errors(reraise=False)
    def fail():
        raise RuntimeError('boom')

    assert fail() is None
    assert any('Error at' in m and 'boom' in m for m in log_messages)


def test_exit_codes():
    assert PeakHeightError('x').exit_code == 1
    assert PeakHeightError('x', exit_code=7).exit_code == 7
    assert InvalidParameterError('x').exit_code == 2
    assert DegenerateSpecError('x').exit_code == 2
    assert isinstance(InvalidParameterError('x'), ValueError)
    assert QuadratureError(achieved_error=1e-3, tolerance=1e-8, n_subdivisions=10).exit_code == 1


def test_settings_from_environment(monkeypatch):
    assert get_settings().seed == 20240521

    monkeypatch.setenv('PEAKS_SEED', '5')
    monkeypatch.setenv('PEAKS_WORKERS', '4')
    settings = get_settings()
    assert settings.seed == 5
    assert settings.workers == 4


def test_settings_are_validated(monkeypatch):
    monkeypatch.setenv('PEAKS_MC_CHUNKS', '0')
    with pytest.raises(ValidationError):
        get_settings()
