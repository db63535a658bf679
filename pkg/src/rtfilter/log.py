import logging

from rich.console import Console
from rich.logging import RichHandler

# Reports and CSVs go to files or stdout; diagnostics always go to stderr.
console = Console(stderr=True)


def configure_logging(level: str = "INFO") -> None:
    """Route the rtfilter loggers through a rich handler on stderr."""
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False, rich_tracebacks=True)],
        force=True,
    )
    logging.getLogger("rtfilter").setLevel(level.upper())
