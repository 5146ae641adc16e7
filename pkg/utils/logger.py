import sys
from pathlib import Path
from typing import Optional

from loguru import logger

from utils.config import settings

CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{extra[name]}</cyan>:<cyan>{function}</cyan> - <level>{message}</level>"
)
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {extra[name]}:{function}:{line} - {message}"

logger.configure(extra={"name": "mmot"})


def configure_logging(level: Optional[str] = None, log_file: Optional[str] = None, console: bool = True) -> None:
    """(Re)install the sinks.

    Console output goes to stderr so commands that print JSON keep stdout
    clean. The file sink is enqueued because batch runs log from worker
    threads.
    """
    level = (level or settings.log_level).upper()
    log_file = log_file or settings.log_file

    logger.remove()
    if console:
        logger.add(sys.stderr, format=CONSOLE_FORMAT, level=level, colorize=True)

    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        logger.add(
            log_file,
            format=FILE_FORMAT,
            level=level,
            rotation="10 MB",
            retention="30 days",
            compression="zip",
            enqueue=True,
        )


configure_logging()


def get_logger(name: str):
    return logger.bind(name=name)
