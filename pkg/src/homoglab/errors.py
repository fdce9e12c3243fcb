"""Exception types with stable CLI exit codes."""

from __future__ import annotations


class HomoglabError(Exception):
    """Base class; exit code 1 (computation failed to meet its contract)."""

    exit_code = 1


class ConfigError(HomoglabError):
    """Invalid configuration or CLI arguments; exit code 2."""

    exit_code = 2


class SolverError(HomoglabError):
    """Linear solver failed to converge to requested tolerance; exit code 3."""

    exit_code = 3
