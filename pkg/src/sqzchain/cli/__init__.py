"""Command-line interface; see :func:`sqzchain.cli.main.run`."""

from .config import ConfigError, RunConfig, emit_config, load_config, parse_config
from .main import main, run

__all__ = ["ConfigError", "RunConfig", "emit_config", "load_config", "main", "parse_config", "run"]
