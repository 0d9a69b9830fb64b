"""Shared error taxonomy; the CLI maps these to exit codes (config -> 2,
data -> 3)."""


class ConfigError(Exception):
    """Malformed, unknown, or inconsistent configuration."""


class DataError(Exception):
    """Missing, malformed, or mismatched data/artifact files."""
