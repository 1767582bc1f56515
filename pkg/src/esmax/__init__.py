"""Reconstruction of electro-kinetic mobility and conductivity from internal
electric-field data of the time-harmonic Maxwell curl-curl system."""

__version__ = "0.1.0"


class EsmaxError(Exception):
    """Base class for package errors."""


class ConfigError(EsmaxError):
    """Invalid run configuration or domain/coefficient specification."""


class ConvergenceError(EsmaxError):
    """An iterative solve failed to converge."""


class TraceError(EsmaxError):
    """Characteristic tracing failed (degenerate field or lost seeds)."""
