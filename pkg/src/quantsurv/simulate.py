"""Synthetic data generation and Monte Carlo coverage studies.

Samples are drawn by inverting the model: a uniform deviate is pushed
through the baseline quantile, scaled by the covariate effect, and mapped
back through the inverse transformation.  Censoring is drawn independently
of the covariates by default.  Coverage runs fit every replicate and tally
how often the intervals and bands capture the closed-form truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .bands import simultaneous_bands
from .errors import InputError, QuantsurvError
from .estimator import FitConfig, fit
from .families import get_family
from .quantiles import (
    Partition,
    default_p_grid,
    group_curves,
    pointwise_ci,
    quantile_curve,
)
from .transform import SurvivalSample


@dataclass(frozen=True)
class PowerTransformation:
    """Increasing map t -> scale * t**exponent used as the true transformation."""

    exponent: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.exponent <= 0 or self.scale <= 0:
            raise InputError("power transformation needs positive exponent and scale")

    def value(self, t):
        return self.scale * np.asarray(t, dtype=float) ** self.exponent

    def inverse(self, y):
        return (np.asarray(y, dtype=float) / self.scale) ** (1.0 / self.exponent)

    def density(self, t):
        t = np.asarray(t, dtype=float)
        return self.scale * self.exponent * t ** (self.exponent - 1.0)


@dataclass(frozen=True)
class DiscreteCovariates:
    """Finite covariate support with sampling probabilities."""

    support: tuple     # k rows, each a tuple of floats
    probs: tuple

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or len(self.support) != probs.size:
            raise InputError("support and probs must align")
        if np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise InputError("probs must be positive and sum to 1")

    @property
    def matrix(self) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.support, dtype=float))

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.choice(len(self.support), size=n, p=np.asarray(self.probs))
        return self.matrix[idx]


@dataclass(frozen=True)
class UniformCovariates:
    """Independent uniforms on a bounded box."""

    low: tuple
    high: tuple

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        low = np.asarray(self.low, dtype=float)
        high = np.asarray(self.high, dtype=float)
        return rng.uniform(low, high, size=(n, low.size))


@dataclass(frozen=True)
class Censoring:
    """Censoring law, independent of the covariates unless tilted.

    ``kind`` is 'none', 'uniform' (on [0, bound]) or 'exponential' (with
    the given rate).  A nonzero ``covariate_tilt`` scales the exponential
    rate by exp(tilt' z); offered for robustness checks only.
    """

    kind: str = "none"
    bound: float = 1.0
    rate: float = 1.0
    covariate_tilt: tuple | None = None

    def draw(self, rng: np.random.Generator, z: np.ndarray) -> np.ndarray:
        n = z.shape[0]
        if self.kind == "none":
            return np.full(n, np.inf)
        if self.kind == "uniform":
            return rng.uniform(0.0, self.bound, size=n)
        if self.kind == "exponential":
            rate = np.full(n, self.rate)
            if self.covariate_tilt is not None:
                rate = rate * np.exp(z @ np.asarray(self.covariate_tilt, dtype=float))
            return rng.exponential(1.0, size=n) / rate
        raise InputError(f"unknown censoring kind {self.kind!r}")


@dataclass(frozen=True)
class SimScenario:
    """Complete description of one simulated sampling design."""

    family: str
    theta0: tuple
    n: int
    covariates: DiscreteCovariates | UniformCovariates
    censoring: Censoring = Censoring()
    transformation: PowerTransformation = PowerTransformation()
    replications: int = 100
    seed: int = 0

    def theta_array(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.theta0, dtype=float))


def _data_rng(scenario: SimScenario, replicate: int) -> np.random.Generator:
    seq = np.random.SeedSequence(scenario.seed, spawn_key=(0, replicate))
    return np.random.default_rng(seq)


def generate(scenario: SimScenario, replicate: int = 0,
             tau: float | None = None) -> SurvivalSample:
    """Draw one right-censored sample from the scenario."""
    rng = _data_rng(scenario, replicate)
    theta = scenario.theta_array()
    family = get_family(scenario.family)
    z = scenario.covariates.draw(rng, scenario.n)
    if z.shape[1] != theta.size:
        raise InputError("covariate dimension does not match theta0")
    u = rng.uniform(size=scenario.n)
    t_fail = scenario.transformation.inverse(
        np.exp(-(z @ theta)) * family.baseline_quantile(u)
    )
    t_cens = scenario.censoring.draw(rng, z)
    times = np.minimum(t_fail, t_cens)
    status = (t_fail <= t_cens).astype(int)
    if status.sum() == 0:
        raise QuantsurvError("scenario produced a sample without failures")
    return SurvivalSample(times, status, z, tau=tau)


def true_group_cdf(scenario: SimScenario, support_mask, t: float) -> float:
    """Population cdf of the failure time given membership in a group."""
    cov = scenario.covariates
    if not isinstance(cov, DiscreteCovariates):
        raise InputError("closed-form group truth requires a discrete law")
    probs = np.asarray(cov.probs, dtype=float)[support_mask]
    zsel = cov.matrix[support_mask]
    theta = scenario.theta_array()
    family = get_family(scenario.family)
    prep = family.prepare(theta, zsel)
    x = scenario.transformation.value(t)
    vals = prep.cdf(float(x))
    return float(probs @ vals / probs.sum())


def true_quantile(scenario: SimScenario, support_mask, p: float,
                  bracket: float = 1e8) -> float:
    """Population quantile for a group of support atoms.

    Single-atom groups use the model inversion directly; mixtures solve the
    monotone cdf equation numerically.
    """
    cov = scenario.covariates
    if not isinstance(cov, DiscreteCovariates):
        raise InputError("closed-form quantiles require a discrete law")
    support_mask = np.asarray(support_mask, dtype=bool)
    if support_mask.sum() == 1:
        z = cov.matrix[support_mask][0]
        theta = scenario.theta_array()
        family = get_family(scenario.family)
        return float(
            scenario.transformation.inverse(
                np.exp(-float(z @ theta)) * family.baseline_quantile(p)
            )
        )
    return float(
        brentq(lambda t: true_group_cdf(scenario, support_mask, t) - p,
               0.0, bracket)
    )


def check_quantile_identities(scenario: SimScenario, p_values,
                              atol: float = 1e-9) -> None:
    """Sanity-check the model's invariance identities on the truth.

    Ratios of transformed quantiles are constant across probability levels
    at a fixed covariate, and equal to exponential-tilt ratios across
    covariates at a fixed level.  Violations mean the generator and the
    closed-form targets disagree.
    """
    cov = scenario.covariates
    if not isinstance(cov, DiscreteCovariates):
        return
    family = get_family(scenario.family)
    theta = scenario.theta_array()
    gamma0 = scenario.transformation
    p_values = [p for p in np.atleast_1d(p_values) if 0.0 < p < 1.0]
    k = len(cov.support)
    for a in range(k):
        mask = np.zeros(k, dtype=bool)
        mask[a] = True
        qs = [true_quantile(scenario, mask, p) for p in p_values]
        for p, q in zip(p_values, qs):
            lhs = gamma0.value(q)
            rhs = np.exp(-float(cov.matrix[a] @ theta)) * family.baseline_quantile(p)
            if abs(lhs - rhs) > atol * max(1.0, abs(rhs)):
                raise QuantsurvError(
                    "quantile identity violated on the scenario truth"
                )


@dataclass
class QuantileTargetReport:
    label: str
    p: float
    true_value: float
    mean_estimate: float
    ci_coverage: float
    band_coverage: float
    mean_ci_width: float


@dataclass
class CoverageReport:
    """Aggregated Monte Carlo results for one scenario."""

    scenario: SimScenario
    alpha: float
    replications: int
    n_converged: int
    n_failed: int
    theta_true: np.ndarray
    theta_mean: np.ndarray
    theta_bias: np.ndarray
    theta_mc_sd: np.ndarray
    theta_mean_se: np.ndarray
    theta_se_ratio: np.ndarray
    theta_ci_coverage: np.ndarray
    targets: list            # QuantileTargetReport per (group, p)
    band_joint_coverage: float
    envelope_joint_coverage: float
    u_star_median: float
    u_star_values: np.ndarray
    theta_estimates: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "replications": self.replications,
            "n_converged": self.n_converged,
            "n_failed": self.n_failed,
            "theta_true": self.theta_true.tolist(),
            "theta_mean": self.theta_mean.tolist(),
            "theta_bias": self.theta_bias.tolist(),
            "theta_mc_sd": self.theta_mc_sd.tolist(),
            "theta_mean_se": self.theta_mean_se.tolist(),
            "theta_se_ratio": self.theta_se_ratio.tolist(),
            "theta_ci_coverage": self.theta_ci_coverage.tolist(),
            "targets": [vars(t) for t in self.targets],
            "band_joint_coverage": self.band_joint_coverage,
            "envelope_joint_coverage": self.envelope_joint_coverage,
            "u_star_median": self.u_star_median,
        }


def _default_groups(cov: DiscreteCovariates):
    groups = []
    k = len(cov.support)
    for a in range(k):
        mask = np.zeros(k, dtype=bool)
        mask[a] = True
        label = "z=" + ",".join(f"{v:g}" for v in cov.matrix[a])
        groups.append((label, mask))
    return groups


def _sample_masks(sample: SurvivalSample, cov: DiscreteCovariates, groups):
    """Membership masks over sample rows for groups of support atoms."""
    masks = []
    for _, support_mask in groups:
        zsel = cov.matrix[np.asarray(support_mask, dtype=bool)]
        member = np.zeros(sample.n, dtype=bool)
        for row in zsel:
            member |= np.all(np.isclose(sample.z, row[None, :]), axis=1)
        masks.append(member)
    return masks


def run_coverage(scenario: SimScenario, groups=None, p_targets=(0.5,),
                 alpha: float = 0.05, band_replicates: int = 500,
                 p_grid=None, fit_config: FitConfig | None = None,
                 with_bands: bool = True) -> CoverageReport:
    """Fit every replicate and tally interval and band coverage.

    ``groups`` is a list of (label, mask-over-support-atoms); by default
    each support atom forms its own group.  Replicates whose fit fails or
    does not converge are counted and excluded from coverage denominators.
    """
    if scenario.replications < 1:
        raise InputError("scenario needs at least one replication")
    cov = scenario.covariates
    if not isinstance(cov, DiscreteCovariates):
        raise InputError("coverage studies require a discrete covariate law")
    if groups is None:
        groups = _default_groups(cov)
    p_targets = [float(p) for p in p_targets]
    if p_grid is None:
        p_grid = default_p_grid()
    p_grid = np.unique(np.concatenate([np.asarray(p_grid, dtype=float),
                                       np.asarray(p_targets)]))
    check_quantile_identities(scenario, p_targets)

    theta_true = scenario.theta_array()
    d = theta_true.size
    k = len(groups)
    truth = {
        (gi, p): true_quantile(scenario, groups[gi][1], p)
        for gi in range(k)
        for p in p_targets
    }
    truth_grid = np.array(
        [[true_quantile(scenario, groups[gi][1], p) for p in p_grid]
         for gi in range(k)]
    )
    target_idx = {p: int(np.searchsorted(p_grid, p)) for p in p_targets}

    thetas, ses, covers_theta = [], [], []
    ci_cover = np.zeros((k, len(p_targets)))
    ci_width = np.zeros((k, len(p_targets)))
    band_cover = np.zeros((k, len(p_targets)))
    mean_est = np.zeros((k, len(p_targets)))
    est_count = np.zeros((k, len(p_targets)))
    env_joint = 0
    band_joint = 0
    u_stars = []
    n_failed = 0
    n_used = 0
    z_crit = float(norm.ppf(1 - alpha / 2))

    for rep in range(scenario.replications):
        try:
            sample = generate(scenario, rep)
            result = fit(sample, scenario.family, theta0=None, config=fit_config)
        except QuantsurvError:
            n_failed += 1
            continue
        if not result.converged:
            n_failed += 1
            continue

        masks = _sample_masks(sample, cov, groups)
        try:
            partition = Partition([lab for lab, _ in groups], masks)
            curves = group_curves(result, partition)
            quantiles = quantile_curve(curves, p_grid)
            cis = pointwise_ci(curves, quantiles, alpha=alpha)
            if with_bands:
                band = simultaneous_bands(
                    result, curves, p_grid, alpha=alpha,
                    replicates=band_replicates,
                    seed=(scenario.seed, 1, rep),
                )
        except QuantsurvError:
            n_failed += 1
            continue

        n_used += 1
        thetas.append(result.theta)
        ses.append(result.se)
        covers_theta.append(
            np.abs(result.theta - theta_true) <= z_crit * result.se
        )

        env_ok = True
        band_ok = True
        for gi in range(k):
            ci = cis[gi]
            valid = ~ci.out_of_range
            inside = (ci.lower <= truth_grid[gi]) & (truth_grid[gi] <= ci.upper)
            if not np.all(inside[valid]) or not valid.all():
                env_ok = False
            if with_bands:
                bd = band.bands[gi]
                b_inside = (bd.lower <= truth_grid[gi]) & (truth_grid[gi] <= bd.upper)
                if not np.all(b_inside[~bd.out_of_range]) or bd.out_of_range.any():
                    band_ok = False
            for pi, p in enumerate(p_targets):
                ti = target_idx[p]
                q_true = truth[(gi, p)]
                if np.isfinite(ci.q[ti]):
                    mean_est[gi, pi] += ci.q[ti]
                    est_count[gi, pi] += 1
                if valid[ti] and ci.lower[ti] <= q_true <= ci.upper[ti]:
                    ci_cover[gi, pi] += 1
                if valid[ti]:
                    ci_width[gi, pi] += ci.upper[ti] - ci.lower[ti]
                if with_bands and not band.bands[gi].out_of_range[ti]:
                    if band.bands[gi].lower[ti] <= q_true <= band.bands[gi].upper[ti]:
                        band_cover[gi, pi] += 1
        env_joint += int(env_ok)
        if with_bands:
            band_joint += int(band_ok)
            u_stars.append(band.u_star)

    if n_used == 0:
        raise QuantsurvError("all replicates failed; cannot report coverage")

    thetas = np.asarray(thetas)
    ses = np.asarray(ses)
    covers_theta = np.asarray(covers_theta, dtype=float)
    mc_sd = thetas.std(axis=0, ddof=1) if n_used > 1 else np.full(d, np.nan)
    mean_se = ses.mean(axis=0)

    targets = []
    for gi in range(k):
        for pi, p in enumerate(p_targets):
            targets.append(
                QuantileTargetReport(
                    label=groups[gi][0],
                    p=p,
                    true_value=truth[(gi, p)],
                    mean_estimate=(mean_est[gi, pi] / est_count[gi, pi]
                                   if est_count[gi, pi] else np.nan),
                    ci_coverage=ci_cover[gi, pi] / n_used,
                    band_coverage=(band_cover[gi, pi] / n_used
                                   if with_bands else np.nan),
                    mean_ci_width=(ci_width[gi, pi] / est_count[gi, pi]
                                   if est_count[gi, pi] else np.nan),
                )
            )

    u_stars = np.asarray(u_stars) if u_stars else np.array([np.nan])
    return CoverageReport(
        scenario=scenario,
        alpha=alpha,
        replications=scenario.replications,
        n_converged=n_used,
        n_failed=n_failed,
        theta_true=theta_true,
        theta_mean=thetas.mean(axis=0),
        theta_bias=thetas.mean(axis=0) - theta_true,
        theta_mc_sd=mc_sd,
        theta_mean_se=mean_se,
        theta_se_ratio=mean_se / mc_sd,
        theta_ci_coverage=covers_theta.mean(axis=0),
        targets=targets,
        band_joint_coverage=(band_joint / n_used if with_bands else np.nan),
        envelope_joint_coverage=env_joint / n_used,
        u_star_median=float(np.median(u_stars)),
        u_star_values=u_stars,
        theta_estimates=thetas,
    )
