import functools
import logging
import time
import traceback

logger = logging.getLogger(__name__)


def log_duration(stage: str):
    """Decorator that logs start, finish and wall time of a pipeline stage."""
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            started = time.perf_counter()
            logger.info(f"{stage}: started")
            try:
                return func(*args, **kwargs)
            finally:
                elapsed = time.perf_counter() - started
                logger.info(f"{stage}: finished in {elapsed:.2f}s", extra={"stage": stage, "seconds": round(elapsed, 3)})
        return wrapper
    return decorator


def skip_on_error(label: str):
    """
    Decorator for independent units of work (one ablation configuration, one
    export). A failure is logged with its traceback and turned into a
    `(None, diagnostics)` result so the remaining units proceed.

    The wrapped function returns `(result, "")` on success.
    """
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs), ""
            except Exception as e:
                diagnostics = f"{type(e).__name__}: {e}"
                logger.error(f"{label} failed in {func.__name__}. Skipping.",
                             extra={"error": diagnostics, "traceback": traceback.format_exc()})
                return None, diagnostics
        return wrapper
    return decorator
