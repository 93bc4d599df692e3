"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class BcgramError(Exception):
    """Base class for all errors raised by :mod:`bcgram`."""


class ParseError(BcgramError, ValueError):
    """Malformed matrix file (ragged rows, non-numeric cells, ...)."""


class DomainError(BcgramError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class EstimationError(DomainError):
    """Probability estimation is impossible for the given mask."""


class ConfigError(DomainError):
    """Invalid experiment or pipeline configuration."""


class DegenerateClusteringError(DomainError):
    """Clustering could not produce the requested number of non-empty clusters."""
