import time
from functools import wraps

from loguru import logger

from peak_heights.exceptions import PeakHeightError


def log_exec_time(label: str | None = None, *, level: str = 'INFO'):
    """Log the wall time of the wrapped call, e.g. a simulation campaign."""

    def wrapper(f):
        name = label or f.__name__

        @wraps(f)
        def inner(*a, **kw):
            start = time.monotonic()
            result = f(*a, **kw)
            exec_time = round(time.monotonic() - start, 2)
            logger.log(level, f'"{name}" finished in {exec_time} seconds')
            return result

        return inner

    return wrapper


def log_if_errors(*, reraise=True):
    """
    Domain errors are logged as one line with their exit code, anything else with
    the traceback. With reraise=False the wrapped call returns None on failure.
    """

    def wrapper(f):
        @wraps(f)
        def inner(*a, **kw):
            try:
                return f(*a, **kw)
            except PeakHeightError as e:
                logger.error(
                    f'Error at "{f.__qualname__}" (exit code {e.exit_code}): {e.message}',
                )
                if reraise:
                    raise
            except Exception as e:
                logger.exception(f'Error at "{f.__qualname__}": {e!s}')
                if reraise:
                    raise

            return None

        return inner

    return wrapper
