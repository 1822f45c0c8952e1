"""Exception hierarchy shared across the package."""

from __future__ import annotations


class QuantsurvError(Exception):
    """Base class for all package errors."""


class InputError(QuantsurvError):
    """Malformed data, configuration, or arguments."""


class EstimationDomainError(QuantsurvError):
    """The requested estimate is not defined on the given data.

    Typical cause: the truncation horizon reaches into a region where the
    at-risk average of the hazard vanishes.
    """


class SingularityError(QuantsurvError):
    """A linear system or product factor degenerated."""


class ConvergenceError(QuantsurvError):
    """Iterative fitting stopped without meeting its tolerance."""

    def __init__(self, message: str, theta=None, score_norm: float | None = None):
        super().__init__(message)
        self.theta = theta
        self.score_norm = score_norm
