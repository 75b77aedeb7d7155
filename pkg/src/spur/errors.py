"""Shared exception types; the CLI maps ValidationError to exit code 2."""


class ValidationError(ValueError):
    """Caller-fixable problem: bad input data, file, or configuration."""
