"""Parametric hazard families for transformation models.

A family supplies the conditional hazard rate ``alpha(x, theta, z)`` on the
transformed time scale, its logarithmic derivatives in ``x`` and ``theta``,
and the induced conditional distribution function.  The two built-in
families are proportional hazards (constant hazard in ``x``) and
proportional odds (log-logistic baseline).  New families plug in by
subclassing :class:`HazardFamily`; the solvers only go through the
prepared-evaluator interface and never branch on the family name.
"""

from __future__ import annotations

import warnings
from abc import ABC, abstractmethod

import numpy as np

from .errors import InputError

# Keeps exp(theta'z) finite in double precision; hitting it means the
# bounded-covariate assumption is violated, so we warn rather than hide it.
LINEAR_PREDICTOR_BOUND = 700.0


def _linear_predictor(theta: np.ndarray, z: np.ndarray) -> np.ndarray:
    eta = z @ theta
    if np.any(np.abs(eta) > LINEAR_PREDICTOR_BOUND):
        warnings.warn(
            "linear predictor exceeded +/-%g and was clamped; "
            "check covariate scaling" % LINEAR_PREDICTOR_BOUND,
            RuntimeWarning,
            stacklevel=3,
        )
        eta = np.clip(eta, -LINEAR_PREDICTOR_BOUND, LINEAR_PREDICTOR_BOUND)
    return eta


def _validate(x: float, theta: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if theta.shape != z.shape:
        raise InputError(f"theta has dimension {theta.shape[0]}, z has {z.shape[0]}")
    if not np.isfinite(theta).all() or not np.isfinite(z).all() or not np.isfinite(x):
        raise InputError("non-finite input to hazard evaluation")
    return theta, z


class PreparedHazard(ABC):
    """Per-subject evaluators at a fixed parameter value.

    ``prepare`` fixes ``theta`` and the covariate matrix once so that the
    repeated evaluations inside the solvers (one call per event time) only
    pay for the ``x``-dependent part.  All methods take a scalar ``x`` and
    return arrays over subjects.
    """

    n: int
    d: int

    @abstractmethod
    def alpha(self, x: float) -> np.ndarray:
        """Hazard rate, shape (n,)."""

    @abstractmethod
    def ell_x(self, x: float) -> np.ndarray:
        """d/dx log alpha, shape (n,)."""

    @abstractmethod
    def ell_theta(self, x: float) -> np.ndarray:
        """d/dtheta log alpha, shape (n, d)."""

    @abstractmethod
    def alpha_x(self, x: float) -> np.ndarray:
        """d/dx alpha, shape (n,)."""

    @abstractmethod
    def alpha_theta(self, x: float) -> np.ndarray:
        """d/dtheta alpha, shape (n, d)."""

    @abstractmethod
    def cdf(self, x: float) -> np.ndarray:
        """Conditional cdf at transformed time x, shape (n,)."""

    @abstractmethod
    def density(self, x: float) -> np.ndarray:
        """d/dx of the conditional cdf, shape (n,)."""

    @abstractmethod
    def cdf_theta(self, x: float) -> np.ndarray:
        """d/dtheta of the conditional cdf, shape (n, d)."""


class HazardFamily(ABC):
    """Interface of a parametric hazard family.

    Scalar entry points (`hazard`, `log_hazard_derivatives`, ...) validate a
    single covariate vector; solvers use :meth:`prepare` for vectorized
    evaluation over the whole sample.
    """

    name: str = "abstract"

    @abstractmethod
    def prepare(self, theta: np.ndarray, z_matrix: np.ndarray) -> PreparedHazard:
        """Bind theta and an (n, d) covariate matrix."""

    @abstractmethod
    def baseline_quantile(self, p):
        """Inverse of the baseline distribution G at probability p.

        Accepts a scalar or an array; probabilities must lie in (0, 1).
        """

    # -- scalar convenience wrappers ------------------------------------

    def hazard(self, x: float, theta, z) -> float:
        if x < 0:
            raise InputError("hazard requires x >= 0")
        theta, z = _validate(x, theta, z)
        return float(self.prepare(theta, z[None, :]).alpha(x)[0])

    def log_hazard_derivatives(self, x: float, theta, z) -> dict:
        """All log-hazard derivatives at (x, theta, z).

        Returns a dict with keys ``ell`` (log hazard), ``ell_x``,
        ``ell_theta``, ``ell_xx``, ``ell_theta_x`` and ``ell_theta_theta``.
        """
        if x < 0:
            raise InputError("log_hazard_derivatives requires x >= 0")
        theta, z = _validate(x, theta, z)
        prep = self.prepare(theta, z[None, :])
        return {
            "ell": float(np.log(prep.alpha(x)[0])),
            "ell_x": float(prep.ell_x(x)[0]),
            "ell_theta": prep.ell_theta(x)[0].copy(),
            "ell_xx": float(self._ell_xx(prep, x)[0]),
            "ell_theta_x": self._ell_theta_x(prep, x)[0].copy(),
            "ell_theta_theta": self._ell_theta_theta(prep, x)[0].copy(),
        }

    def conditional_cdf(self, x: float, theta, z) -> float:
        if x < 0:
            raise InputError("conditional_cdf requires x >= 0")
        theta, z = _validate(x, theta, z)
        return float(self.prepare(theta, z[None, :]).cdf(x)[0])

    def conditional_density(self, x: float, theta, z) -> float:
        if x < 0:
            raise InputError("conditional_density requires x >= 0")
        theta, z = _validate(x, theta, z)
        return float(self.prepare(theta, z[None, :]).density(x)[0])

    # Second derivatives only feed diagnostics; default to finite
    # differences of the exact first derivatives.
    def _ell_xx(self, prep: PreparedHazard, x: float, h: float = 1e-6) -> np.ndarray:
        lo = max(x - h, 0.0)
        return (prep.ell_x(x + h) - prep.ell_x(lo)) / (x + h - lo)

    def _ell_theta_x(self, prep: PreparedHazard, x: float, h: float = 1e-6) -> np.ndarray:
        lo = max(x - h, 0.0)
        return (prep.ell_theta(x + h) - prep.ell_theta(lo)) / (x + h - lo)

    def _ell_theta_theta(self, prep: PreparedHazard, x: float) -> np.ndarray:
        raise NotImplementedError


class _PreparedPH(PreparedHazard):
    def __init__(self, theta: np.ndarray, z_matrix: np.ndarray):
        self.z = np.asarray(z_matrix, dtype=float)
        self.n, self.d = self.z.shape
        self.eta = _linear_predictor(theta, self.z)
        self.w = np.exp(self.eta)
        self._zeros = np.zeros(self.n)

    def alpha(self, x):
        return self.w

    def ell_x(self, x):
        return self._zeros

    def ell_theta(self, x):
        return self.z

    def alpha_x(self, x):
        return self._zeros

    def alpha_theta(self, x):
        return self.z * self.w[:, None]

    def cdf(self, x):
        return -np.expm1(-self.w * x)

    def density(self, x):
        return self.w * np.exp(-self.w * x)

    def cdf_theta(self, x):
        return self.z * (self.w * x * np.exp(-self.w * x))[:, None]


class ProportionalHazards(HazardFamily):
    """Constant hazard in transformed time: alpha = exp(theta'z)."""

    name = "ph"

    def prepare(self, theta, z_matrix):
        return _PreparedPH(np.asarray(theta, dtype=float), z_matrix)

    def baseline_quantile(self, p):
        p = np.asarray(p, dtype=float)
        if np.any((p <= 0.0) | (p >= 1.0)):
            raise InputError("baseline_quantile requires 0 < p < 1")
        out = -np.log1p(-p)
        return float(out) if out.ndim == 0 else out

    def _ell_xx(self, prep, x, h=None):
        return np.zeros(prep.n)

    def _ell_theta_x(self, prep, x, h=None):
        return np.zeros((prep.n, prep.d))

    def _ell_theta_theta(self, prep, x):
        return np.zeros((prep.n, prep.d, prep.d))


class _PreparedPO(PreparedHazard):
    def __init__(self, theta: np.ndarray, z_matrix: np.ndarray):
        self.z = np.asarray(z_matrix, dtype=float)
        self.n, self.d = self.z.shape
        self.eta = _linear_predictor(theta, self.z)
        self.w = np.exp(self.eta)

    def alpha(self, x):
        return self.w / (1.0 + self.w * x)

    def ell_x(self, x):
        return -self.alpha(x)

    def ell_theta(self, x):
        return self.z / (1.0 + self.w * x)[:, None]

    def alpha_x(self, x):
        return -((self.w / (1.0 + self.w * x)) ** 2)

    def alpha_theta(self, x):
        return self.z * (self.w / (1.0 + self.w * x) ** 2)[:, None]

    def cdf(self, x):
        u = self.w * x
        return u / (1.0 + u)

    def density(self, x):
        return self.w / (1.0 + self.w * x) ** 2

    def cdf_theta(self, x):
        return self.z * (self.w * x / (1.0 + self.w * x) ** 2)[:, None]


class ProportionalOdds(HazardFamily):
    """Log-logistic baseline: alpha = exp(theta'z) / (1 + exp(theta'z) x)."""

    name = "po"

    def prepare(self, theta, z_matrix):
        return _PreparedPO(np.asarray(theta, dtype=float), z_matrix)

    def baseline_quantile(self, p):
        p = np.asarray(p, dtype=float)
        if np.any((p <= 0.0) | (p >= 1.0)):
            raise InputError("baseline_quantile requires 0 < p < 1")
        out = p / (1.0 - p)
        return float(out) if out.ndim == 0 else out

    def _ell_xx(self, prep, x, h=None):
        return prep.alpha(x) ** 2

    def _ell_theta_x(self, prep, x, h=None):
        return -prep.z * (prep.w / (1.0 + prep.w * x) ** 2)[:, None]

    def _ell_theta_theta(self, prep, x):
        u = prep.w * x
        fac = -(u / (1.0 + u) ** 2)
        return fac[:, None, None] * prep.z[:, :, None] * prep.z[:, None, :]


_FAMILIES = {
    "ph": ProportionalHazards,
    "po": ProportionalOdds,
    "proportional_hazards": ProportionalHazards,
    "proportional_odds": ProportionalOdds,
}


def get_family(name: str | HazardFamily) -> HazardFamily:
    """Resolve a family identifier to a family instance."""
    if isinstance(name, HazardFamily):
        return name
    try:
        return _FAMILIES[str(name).lower()]()
    except KeyError:
        raise InputError(
            f"unknown hazard family {name!r}; available: ph, po"
        ) from None
