"""Score equation, Fisher scoring and covariance plug-ins.

The regression parameter solves a conditional-rank score equation: each
failure contributes the centered log-hazard gradient minus a weight times
the centered log-hazard slope, both evaluated at the solved transformation.
Scoring steps use the plug-in covariance of the score, which for the
efficient weight also approximates its negative derivative, with step
halving and a numerical-Jacobian fallback for stubborn regions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EstimationDomainError, InputError, SingularityError
from .families import HazardFamily, get_family
from .fredholm import FredholmSolution, fredholm_residual, solve_weight
from .transform import SurvivalSample, TransformEstimate, estimate_transform

PHI_MODES = ("efficient", "minus_gamma_dot", "zero")


@dataclass
class FitConfig:
    tol: float = 1e-8
    max_iter: int = 50
    phi_mode: str = "efficient"
    max_halvings: int = 10
    jacobian_step: float = 1e-5
    warm_start_tol: float = 1e-6
    warm_start_iter: int = 25

    def __post_init__(self):
        if self.phi_mode not in PHI_MODES:
            raise InputError(f"phi_mode must be one of {PHI_MODES}")


@dataclass
class ScoreFit:
    """Result of solving the score equation."""

    theta: np.ndarray
    score: np.ndarray
    score_norm: float
    iterations: int
    converged: bool
    sigma1: np.ndarray
    sigma2: np.ndarray
    sigma: np.ndarray
    se: np.ndarray
    transform: TransformEstimate
    phi: np.ndarray                      # (m, d) weight values on the grid
    phi_solution: FredholmSolution | None
    phi_mode: str
    sample: SurvivalSample = field(repr=False, default=None)
    family: HazardFamily = field(repr=False, default=None)
    score_trace: list = field(default_factory=list, repr=False)
    warnings: list = field(default_factory=list)
    fredholm_residual: float | None = None

    @property
    def theta_hat(self) -> np.ndarray:
        return self.theta


def score_vector(sample: SurvivalSample, family: HazardFamily, theta,
                 phi_values=None, transform: TransformEstimate | None = None,
                 gamma=None) -> np.ndarray:
    """Score at ``theta`` for a given weight function on the event grid.

    ``phi_values`` is an (m, d) array (zeros when omitted).  Passing a
    precomputed ``transform`` (or bare ``gamma`` values) avoids re-solving
    the transformation.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if gamma is None:
        if transform is not None:
            gamma = transform.gamma
        else:
            from .transform import solve_gamma

            gamma = solve_gamma(sample, family, theta)
    m, d, n = sample.m, sample.d, sample.n
    if phi_values is None:
        phi_values = np.zeros((m, d))
    phi_values = np.asarray(phi_values, dtype=float).reshape(m, d)

    prep = family.prepare(theta, sample.z)
    total = np.zeros(d)
    for j in range(m):
        sl = sample.risk_slice(j)
        x = gamma[j]
        a = prep.alpha(x)[sl]
        s = a.sum() / n
        s_dot = prep.alpha_theta(x)[sl].sum(axis=0) / n
        s_prime = prep.alpha_x(x)[sl].sum() / n
        ids = sample.event_ids[j]
        b1 = prep.ell_theta(x)[ids] - s_dot / s
        b2 = prep.ell_x(x)[ids] - s_prime / s
        total += b1.sum(axis=0) - b2.sum() * phi_values[j]
    return total / n


def covariance_matrices(transform: TransformEstimate, phi_values,
                        degenerate: bool = False):
    """Plug-in covariance components of the score.

    Returns ``(sigma1, sigma2, sigma)``.  ``sigma1`` integrates the
    weight-adjusted at-risk dispersion against the counting measure;
    ``sigma2`` is the double kernel integral of the weight-adjusted
    covariance and vanishes identically on the degenerate path.
    """
    m, d = transform.m, transform.gamma_dot.shape[1]
    phi_values = np.asarray(phi_values, dtype=float).reshape(m, d)
    dn = transform.dn
    rho, v, vbar = transform.rho, transform.v, transform.vbar

    v_phi = (
        vbar
        + v[:, None, None] * phi_values[:, :, None] * phi_values[:, None, :]
        - rho[:, :, None] * phi_values[:, None, :]
        - phi_values[:, :, None] * rho[:, None, :]
    )
    sigma1 = np.tensordot(dn, v_phi, axes=(0, 0))
    if degenerate:
        sigma2 = np.zeros((d, d))
    else:
        rho_phi_dn = (rho - v[:, None] * phi_values) * dn[:, None]
        sigma2 = rho_phi_dn.T @ transform.kernel_matrix() @ rho_phi_dn
    sigma = sigma1 + sigma2
    return sigma1, sigma2, sigma


def _null_direction(matrix: np.ndarray) -> np.ndarray:
    eigval, eigvec = np.linalg.eigh(matrix)
    return eigvec[:, int(np.argmin(np.abs(eigval)))]


class _State:
    """Everything the scoring loop needs at one parameter value."""

    def __init__(self, sample, family, theta, phi_mode):
        self.theta = np.atleast_1d(np.asarray(theta, dtype=float))
        self.transform = estimate_transform(sample, family, self.theta)
        self.phi_solution = None
        self.residual = None
        m, d = self.transform.m, sample.d
        if phi_mode == "efficient":
            self.phi_solution = solve_weight(self.transform)
            self.phi = self.phi_solution.phi
            self.residual = fredholm_residual(self.phi_solution, self.transform)
            self.degenerate = self.phi_solution.degenerate
        elif phi_mode == "minus_gamma_dot":
            self.phi = -self.transform.gamma_dot
            self.degenerate = False
        else:
            self.phi = np.zeros((m, d))
            self.degenerate = False
        self.score = score_vector(sample, family, self.theta,
                                  phi_values=self.phi, transform=self.transform)
        self.score_norm = float(np.abs(self.score).max(initial=0.0))

    def covariances(self):
        return covariance_matrices(self.transform, self.phi, self.degenerate)


def _numerical_jacobian(sample, family, theta, phi_mode, step):
    d = theta.shape[0]
    jac = np.empty((d, d))
    for k in range(d):
        h = step * max(1.0, abs(theta[k]))
        up = theta.copy()
        up[k] += h
        down = theta.copy()
        down[k] -= h
        su = _State(sample, family, up, phi_mode).score
        sd = _State(sample, family, down, phi_mode).score
        jac[:, k] = (su - sd) / (2.0 * h)
    return jac


def fit(sample: SurvivalSample, family: HazardFamily | str, theta0=None,
        config: FitConfig | None = None) -> ScoreFit:
    """Solve the score equation by Fisher scoring.

    Parameters
    ----------
    sample : SurvivalSample
    family : HazardFamily or str
    theta0 : array_like, optional
        Starting value.  When omitted, a warm start solves the same score
        equation with the weight function fixed at zero first.
    config : FitConfig, optional

    Returns
    -------
    ScoreFit
        ``converged`` is False when the tolerance was not met; the last
        iterate and score norm are still reported.
    """
    family = get_family(family)
    config = config or FitConfig()
    if sample.m == 0:
        raise InputError("no events inside the truncation horizon; cannot fit")

    if theta0 is None:
        warm = _solve_loop(
            sample, family, np.zeros(sample.d), "zero",
            config.warm_start_tol, config.warm_start_iter, config,
        )
        theta_init = warm[0]
    else:
        theta_init = np.atleast_1d(np.asarray(theta0, dtype=float))
        if theta_init.shape[0] != sample.d:
            raise InputError("theta0 dimension mismatch")

    theta, state, iterations, trace, converged, notes = _solve_loop(
        sample, family, theta_init, config.phi_mode,
        config.tol, config.max_iter, config, full=True,
    )

    sigma1, sigma2, sigma = state.covariances()
    if config.phi_mode == "efficient":
        se, se_note = _standard_errors(sigma, sample.n)
        if se_note:
            notes.append(se_note)
    else:
        # Variance for inefficient weights takes a sandwich form that this
        # estimator does not report; point estimates only.
        se = np.full(sample.d, np.nan)
        notes.append("standard errors unavailable for phi_mode=%s" % config.phi_mode)
    if not converged:
        notes.append(
            "no convergence after %d iterations; score max-norm %.3e"
            % (iterations, state.score_norm)
        )
    return ScoreFit(
        theta=theta,
        score=state.score,
        score_norm=state.score_norm,
        iterations=iterations,
        converged=converged,
        sigma1=sigma1,
        sigma2=sigma2,
        sigma=sigma,
        se=se,
        transform=state.transform,
        phi=state.phi,
        phi_solution=state.phi_solution,
        phi_mode=config.phi_mode,
        sample=sample,
        family=family,
        score_trace=trace,
        warnings=notes,
        fredholm_residual=state.residual,
    )


def _standard_errors(sigma: np.ndarray, n: int):
    try:
        sigma_inv = np.linalg.inv(sigma)
    except np.linalg.LinAlgError:
        return np.full(sigma.shape[0], np.nan), "singular covariance; se unavailable"
    diag = np.diag(sigma_inv)
    if np.any(diag < 0):
        return np.full(sigma.shape[0], np.nan), "covariance not PSD; se unavailable"
    return np.sqrt(diag / n), None


def _solve_loop(sample, family, theta_init, phi_mode, tol, max_iter, config,
                full: bool = False):
    state = _State(sample, family, theta_init, phi_mode)
    theta = state.theta
    trace = [state.score_norm]
    notes: list[str] = []
    converged = state.score_norm < tol
    iterations = 0

    while not converged and iterations < max_iter:
        iterations += 1
        sigma = state.covariances()[2]
        try:
            step = np.linalg.solve(sigma, state.score)
        except np.linalg.LinAlgError:
            step = np.full_like(state.score, np.nan)
        if not np.isfinite(step).all():
            direction = _null_direction(sigma)
            raise SingularityError(
                "singular score covariance; no information along direction "
                + np.array2string(direction, precision=4)
            )
        new_state = _try_step(sample, family, theta, step, state, phi_mode, config)
        if new_state is None:
            # Scoring direction failed to decrease the score; switch to a
            # damped Newton step with a numerical Jacobian.
            jac = _numerical_jacobian(sample, family, theta, phi_mode,
                                      config.jacobian_step)
            try:
                step = np.linalg.solve(jac, -state.score)
            except np.linalg.LinAlgError:
                notes.append("singular numerical Jacobian; stopping early")
                break
            new_state = _try_step(sample, family, theta, step, state, phi_mode,
                                  config)
            if new_state is None:
                notes.append("no descent direction found; stopping early")
                break
        state = new_state
        theta = state.theta
        trace.append(state.score_norm)
        converged = state.score_norm < tol

    if full:
        return theta, state, iterations, trace, converged, notes
    return theta, state, iterations, trace, converged


def _try_step(sample, family, theta, step, state, phi_mode, config):
    """Damped step: halve until the score norm decreases, or give up."""
    scale = 1.0
    for _ in range(config.max_halvings + 1):
        candidate = theta + scale * step
        try:
            new_state = _State(sample, family, candidate, phi_mode)
        except (SingularityError, EstimationDomainError, FloatingPointError):
            scale *= 0.5
            continue
        if new_state.score_norm < state.score_norm:
            return new_state
        scale *= 0.5
    return None
