"""Logging setup shared by the CLI and experiment drivers"""

import logging

from rich.console import Console
from rich.logging import RichHandler

console = Console()
# logs go to stderr so JSON on stdout stays parseable
error_console = Console(stderr=True)

_LOGGER_NAME = "quadricrl"


def configure_logging(verbose: bool = False) -> logging.Logger:
    """Attach a rich handler to the package logger (idempotent)"""
    logger = logging.getLogger(_LOGGER_NAME)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)

    if not any(isinstance(h, RichHandler) for h in logger.handlers):
        handler = RichHandler(console=error_console, show_path=verbose, rich_tracebacks=verbose)
        handler.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(handler)
    logger.propagate = False
    return logger
