"""Sample transformation estimate and its jump-measure companions.

The unknown increasing time transformation of the model is estimated by a
recursion over the distinct uncensored times: each jump is the increment of
the aggregated counting process divided by the at-risk average of the
hazard, evaluated at the solution so far.  Alongside the transformation this
module computes its parameter gradient (a linear recursion driven by the
same jumps), the jump measures used by the weight and covariance machinery,
and the discrete product integral propagating the gradient equation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EstimationDomainError, InputError, SingularityError
from .families import HazardFamily, PreparedHazard


class SurvivalSample:
    """Right-censored sample with the derived event grid.

    Parameters
    ----------
    times : array_like, shape (n,)
        Nonnegative follow-up times.
    status : array_like, shape (n,)
        1 for an observed failure, 0 for censoring.
    covariates : array_like, shape (n, d) or (n,)
        Covariate rows; bounded by `covariate_bound`.
    tau : float, optional
        Truncation horizon.  Defaults to the largest uncensored time at
        which at least two subjects remain at risk.
    covariate_bound : float
        Reject covariates with any |entry| above this bound.

    Subjects are stored sorted by time; ``order`` maps sorted positions
    back to the input rows.  Censored subjects tied with an event time
    count as at risk at that time (risk set uses ``time >= t``).
    """

    def __init__(self, times, status, covariates, tau: float | None = None,
                 covariate_bound: float = 1e3):
        times = np.asarray(times, dtype=float)
        status = np.asarray(status)
        z = np.asarray(covariates, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        n = times.shape[0]
        if status.shape[0] != n or z.shape[0] != n:
            raise InputError("times, status and covariates must have equal length")
        if n == 0:
            raise InputError("empty sample")
        if not np.isfinite(times).all() or np.any(times < 0):
            raise InputError("times must be finite and nonnegative")
        if not np.isin(status, (0, 1)).all():
            raise InputError("status must be 0 or 1")
        if not np.isfinite(z).all():
            raise InputError("covariates must be finite")
        if np.abs(z).max() > covariate_bound:
            raise InputError(
                f"covariate magnitude exceeds bound {covariate_bound}; "
                "standardize or raise covariate_bound"
            )
        status = status.astype(np.int8)
        if status.sum() == 0:
            raise InputError("sample contains no observed failures")

        order = np.argsort(times, kind="stable")
        self.times = times[order]
        self.status = status[order]
        self.z = z[order]
        self.order = order
        self.n = n
        self.d = z.shape[1]

        if tau is None:
            tau = self._default_tau()
        elif tau > self.times[-1]:
            raise InputError("tau must not exceed the largest observed time")
        self.tau = float(tau)

        event_times = self.times[(self.status == 1) & (self.times <= self.tau)]
        self.grid = np.unique(event_times)
        self.m = self.grid.size
        # N.(dt) at each grid time
        counts = np.array(
            [np.count_nonzero(event_times == t) for t in self.grid], dtype=float
        )
        self.dn = counts / n
        # risk set at grid[j] is the suffix starting at risk_start[j]
        self.risk_start = np.searchsorted(self.times, self.grid, side="left")
        # subjects (sorted indices) failing at grid[j]
        self.event_ids = [
            np.flatnonzero((self.times == t) & (self.status == 1)) for t in self.grid
        ]

    def _default_tau(self) -> float:
        event_times = np.unique(self.times[self.status == 1])
        risk = self.n - np.searchsorted(self.times, event_times, side="left")
        ok = event_times[risk >= 2]
        return float(ok[-1]) if ok.size else float(event_times[-1])

    def risk_slice(self, j: int) -> slice:
        """Sorted-index slice of subjects at risk at grid time j."""
        return slice(self.risk_start[j], self.n)

    def __repr__(self) -> str:
        n_event = int(self.status.sum())
        return (
            f"<SurvivalSample n={self.n} d={self.d} events={n_event} "
            f"grid={self.m} tau={self.tau:g}>"
        )


@dataclass
class TransformEstimate:
    """Step-function estimates on the event grid at a fixed parameter.

    All arrays are indexed by the grid of distinct uncensored times.  The
    ``gamma``/``gamma_dot`` values are right-continuous (post-jump);
    ``s_jump``/``s_dot_jump``/``s_prime_jump`` are the at-risk averages
    evaluated at the pre-jump transformation value, as used in the jump
    recursions.  ``v``, ``rho`` and ``vbar`` are at-risk variances and
    covariances of the log-hazard derivatives at the post-jump value.
    """

    theta: np.ndarray
    times: np.ndarray            # (m,)
    gamma: np.ndarray            # (m,)
    gamma_dot: np.ndarray        # (m, d)
    s_jump: np.ndarray           # (m,)
    s_dot_jump: np.ndarray       # (m, d)
    s_prime_jump: np.ndarray     # (m,)
    c_jumps: np.ndarray          # (m,)
    b_jumps: np.ndarray          # (m,)
    v: np.ndarray                # (m,)
    rho: np.ndarray              # (m, d)
    vbar: np.ndarray             # (m, d, d)
    prodint: np.ndarray          # (m,) product integral from 0 to each grid time
    dn: np.ndarray = field(repr=False, default=None)  # (m,) counting increments

    @property
    def m(self) -> int:
        return self.times.size

    def gamma_at(self, t) -> np.ndarray:
        """Right-continuous evaluation of the transformation at times t."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right") - 1
        vals = np.where(idx >= 0, self.gamma[np.maximum(idx, 0)], 0.0)
        return vals

    def prodint_pair(self, i: int, j: int) -> float:
        """Product integral between grid times i and j (i <= j)."""
        if i > j:
            raise InputError("prodint_pair requires i <= j")
        if i < 0:
            return float(self.prodint[j])
        return float(self.prodint[j] / self.prodint[i])

    def kernel_diag(self) -> np.ndarray:
        """Variance function K(t, t) of the baseline fluctuation at grid times."""
        p2 = self.prodint**2
        return p2 * np.cumsum(self.c_jumps / p2)

    def kernel_matrix(self) -> np.ndarray:
        """Full (m, m) covariance kernel K(t_i, t_j); O(m^2) memory."""
        m = self.m
        if m == 0:
            return np.zeros((0, 0))
        cum = np.cumsum(self.c_jumps / self.prodint**2)
        ii = np.minimum.outer(np.arange(m), np.arange(m))
        return self.prodint[:, None] * cum[ii] * self.prodint[None, :]


def _prepared(sample: SurvivalSample, family: HazardFamily, theta) -> PreparedHazard:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape[0] != sample.d:
        raise InputError(f"theta has dimension {theta.shape[0]}, sample has {sample.d}")
    if not np.isfinite(theta).all():
        raise InputError("theta must be finite")
    return family.prepare(theta, sample.z)


def solve_gamma(sample: SurvivalSample, family: HazardFamily, theta) -> np.ndarray:
    """Transformation values at the grid times (post-jump).

    Raises
    ------
    EstimationDomainError
        If the at-risk hazard average vanishes at a grid time; tau then
        reaches outside the estimable range.
    """
    prep = _prepared(sample, family, theta)
    gamma = np.empty(sample.m)
    x = 0.0
    for j in range(sample.m):
        sl = sample.risk_slice(j)
        s = prep.alpha(x)[sl].sum() / sample.n
        if s <= 0.0 or not np.isfinite(s):
            raise EstimationDomainError(
                f"at-risk hazard average vanished at t={sample.grid[j]:g}; "
                "reduce tau"
            )
        x += sample.dn[j] / s
        gamma[j] = x
    return gamma


def solve_gamma_dot(sample: SurvivalSample, family: HazardFamily, theta,
                    gamma: np.ndarray) -> np.ndarray:
    """Parameter gradient of the transformation at the grid times."""
    prep = _prepared(sample, family, theta)
    out = np.empty((sample.m, sample.d))
    gdot = np.zeros(sample.d)
    x_prev = 0.0
    for j in range(sample.m):
        sl = sample.risk_slice(j)
        s = prep.alpha(x_prev)[sl].sum() / sample.n
        s_dot = prep.alpha_theta(x_prev)[sl].sum(axis=0) / sample.n
        s_prime = prep.alpha_x(x_prev)[sl].sum() / sample.n
        gdot = gdot - (s_dot + s_prime * gdot) * sample.dn[j] / s**2
        out[j] = gdot
        x_prev = gamma[j]
    return out


def product_integral(sample: SurvivalSample, family: HazardFamily, theta,
                     gamma: np.ndarray) -> np.ndarray:
    """Discrete product integral from 0 to each grid time.

    Each factor is one minus the x-derivative of the at-risk hazard average
    times the corresponding jump of the inverse-squared measure.  Constant
    hazards contribute unit factors, so no family-specific branch exists.
    """
    prep = _prepared(sample, family, theta)
    out = np.empty(sample.m)
    acc = 1.0
    x_prev = 0.0
    for j in range(sample.m):
        sl = sample.risk_slice(j)
        s = prep.alpha(x_prev)[sl].sum() / sample.n
        s_prime = prep.alpha_x(x_prev)[sl].sum() / sample.n
        c_jump = sample.dn[j] / s**2
        factor = 1.0 - s_prime * c_jump
        if factor <= 0.0:
            raise SingularityError(
                f"product-integral factor {factor:g} <= 0 at t={sample.grid[j]:g}"
            )
        acc *= factor
        out[j] = acc
        x_prev = gamma[j]
    return out


def accumulate_cb(sample: SurvivalSample, family: HazardFamily, theta,
                  gamma: np.ndarray) -> dict:
    """Jump measures and at-risk moments along the solved transformation.

    Returns a dict with the inverse-squared jump measure ``c_jumps``, the
    dispersion jump measure ``b_jumps`` and the at-risk variance/covariance
    arrays ``v`` (scalar), ``rho`` (vector) and ``vbar`` (matrix), together
    with the at-risk averages at the pre-jump argument (``s_jump``,
    ``s_dot_jump``, ``s_prime_jump``).
    """
    prep = _prepared(sample, family, theta)
    m, d, n = sample.m, sample.d, sample.n
    s_jump = np.empty(m)
    s_dot_jump = np.empty((m, d))
    s_prime_jump = np.empty(m)
    v = np.empty(m)
    rho = np.empty((m, d))
    vbar = np.empty((m, d, d))

    x_prev = 0.0
    for j in range(m):
        sl = sample.risk_slice(j)
        s_jump[j] = prep.alpha(x_prev)[sl].sum() / n
        s_dot_jump[j] = prep.alpha_theta(x_prev)[sl].sum(axis=0) / n
        s_prime_jump[j] = prep.alpha_x(x_prev)[sl].sum() / n

        x = gamma[j]
        a = prep.alpha(x)[sl]
        wts = a / a.sum()
        lx = prep.ell_x(x)[sl]
        lth = prep.ell_theta(x)[sl]
        mean_lx = wts @ lx
        mean_lth = wts @ lth
        v[j] = wts @ lx**2 - mean_lx**2
        rho[j] = (wts * lx) @ lth - mean_lx * mean_lth
        vbar[j] = (wts[:, None] * lth).T @ lth - np.outer(mean_lth, mean_lth)
        x_prev = x

    c_jumps = sample.dn / s_jump**2
    b_jumps = v * sample.dn
    return {
        "s_jump": s_jump,
        "s_dot_jump": s_dot_jump,
        "s_prime_jump": s_prime_jump,
        "c_jumps": c_jumps,
        "b_jumps": b_jumps,
        "v": v,
        "rho": rho,
        "vbar": vbar,
    }


def estimate_transform(sample: SurvivalSample, family: HazardFamily,
                       theta) -> TransformEstimate:
    """Solve the transformation and assemble all grid quantities."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    gamma = solve_gamma(sample, family, theta)
    gamma_dot = solve_gamma_dot(sample, family, theta, gamma)
    prodint = product_integral(sample, family, theta, gamma)
    cb = accumulate_cb(sample, family, theta, gamma)
    return TransformEstimate(
        theta=theta,
        times=sample.grid.copy(),
        gamma=gamma,
        gamma_dot=gamma_dot,
        prodint=prodint,
        dn=sample.dn.copy(),
        **cb,
    )
