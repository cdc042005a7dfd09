# heat_estimator/log.py
import inspect
import logging
import sys

from loguru import logger

LOG_FORMAT = (
    "<green>{time:HH:mm:ss.SSS}</green> | <level>{level: <8}</level> | "
    "<cyan>{thread.name}</cyan> | <level>{message}</level>"
)

logger = logger.opt(colors=True)
"""
heat_estimator logger.

Defaults:
- level: `INFO`, changed by the `log_level` setting
- sink: stderr

Usage:
    ```python
    from heat_estimator.log import logger

    logger.info("Patch <green>setup</> finished")
    logger.debug(f"CG converged in {iterations} iterations")
    logger.warning("Power iteration stagnated")
    ```
"""


class InterceptHandler(logging.Handler):
    def emit(self, record: logging.LogRecord) -> None:
        # Get corresponding Loguru level if it exists.
        level: str | int
        try:
            level = logger.level(record.levelname).name
        except ValueError:
            level = record.levelno

        # Find caller from where originated the logged message.
        frame, depth = inspect.currentframe(), 0
        while frame and (depth == 0 or frame.f_code.co_filename == logging.__file__):
            frame = frame.f_back
            depth += 1

        logger.opt(depth=depth, exception=record.exc_info).log(
            level, record.getMessage()
        )


def set_logger_level_from_config(log_level):
    """
    Route all package and stdlib logging to a single stderr sink at `log_level`.

    Args:
        log_level (str): Loguru level name, e.g. "DEBUG", "INFO", "WARNING".

    Patch solves log from worker threads, so the sink is enqueued and each
    record carries its thread name. scipy and pydantic emit through stdlib
    logging, which is intercepted here.
    """
    logger.remove()
    logger.add(
        sys.stderr,
        level=log_level,
        format=LOG_FORMAT,
        enqueue=True,
        backtrace=False,
        diagnose=False,
    )

    logging.basicConfig(handlers=[InterceptHandler()], level=0, force=True)

    logger.debug(f"Log level set to {log_level}")
