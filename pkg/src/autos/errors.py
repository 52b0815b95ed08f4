"""Exception hierarchy shared by every module."""


class AutoSError(Exception):
    """Base class for all package errors."""


class ConfigError(AutoSError, ValueError):
    """Invalid configuration or synthetic spec."""


class DataError(AutoSError, ValueError):
    """Malformed or inconsistent input data."""


class IngestionError(DataError):
    """A feature table row could not be parsed."""

    def __init__(self, path, row, message):
        self.path = str(path)
        self.row = row
        super().__init__(f"{self.path}: row {row}: {message}")


class ShapeError(AutoSError, ValueError):
    """Array dimensions do not chain."""


class NumericError(AutoSError, ArithmeticError):
    """A loss or statistic became non-finite."""


class DegenerateClusterError(AutoSError, ValueError):
    """A cluster statistic is undefined (zero classifier row, zero radius with members)."""


class EmptyCluster(AutoSError, ValueError):
    """A (domain, class) cluster has no members."""


class EmptyDomain(AutoSError, ValueError):
    """Renewal left a domain without any sample."""
