"""Shared exception types mapped to CLI exit codes."""


class DataError(Exception):
    """Missing, unreadable or inconsistent input data (exit code 2)."""


class NumericError(RuntimeError):
    """Non-finite values in training or evaluation (exit code 3)."""
