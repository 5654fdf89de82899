import pytest
from loguru import logger

from peak_heights.numerics import QuadConfig, RandomStream, normal_stream

SEED = 20240521


@pytest.fixture
def quad() -> QuadConfig:
    return QuadConfig()


@pytest.fixture
def tight_quad() -> QuadConfig:
    return QuadConfig(abs_tol=1e-13, rel_tol=1e-12, max_subdivisions=20_000)


@pytest.fixture
def stream() -> RandomStream:
    return normal_stream(SEED)


@pytest.fixture
def log_messages():
    messages = []
    handler_id = logger.add(messages.append, level='DEBUG', format='{level} {message}')
    yield messages
    logger.remove(handler_id)


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for name in ('SEED', 'N_SAMPLES', 'MC_CHUNKS', 'WORKERS', 'ABS_TOL', 'REL_TOL', 'LOG_LEVEL'):
        monkeypatch.delenv(f'PEAKS_{name}', raising=False)
