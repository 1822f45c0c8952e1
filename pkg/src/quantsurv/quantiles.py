"""Grouped conditional distribution functions, quantiles and intervals.

Group-level distribution functions average the fitted conditional cdf over
the sample members of each partition cell.  Quantiles invert the resulting
step functions; pointwise intervals push a symmetric band on a transformed
probability scale back through the quantile map, which keeps the interval
inside the attainable probability range.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import InputError, SingularityError
from .estimator import ScoreFit


class Partition:
    """Finite partition of the sample by covariate group.

    Built from boolean membership masks over the sample rows (in the
    sample's internal, time-sorted order).  Groups must be disjoint and
    nonempty; rows outside every group are allowed and simply do not
    contribute to any group average.
    """

    def __init__(self, labels, masks, n_total: int | None = None):
        if len(labels) != len(masks):
            raise InputError("labels and masks must align")
        if len(labels) == 0:
            raise InputError("partition needs at least one group")
        self.labels = [str(lab) for lab in labels]
        self.masks = [np.asarray(m, dtype=bool) for m in masks]
        sizes = {m.shape[0] for m in self.masks}
        if len(sizes) != 1:
            raise InputError("masks must have equal length")
        self.n = n_total if n_total is not None else self.masks[0].shape[0]
        stacked = np.vstack(self.masks)
        if np.any(stacked.sum(axis=0) > 1):
            raise InputError("partition groups overlap on the sample")
        self.counts = np.array([int(m.sum()) for m in self.masks])
        for lab, cnt in zip(self.labels, self.counts):
            if cnt == 0:
                raise InputError(f"partition group {lab!r} is empty")
        self.shares = self.counts / self.n

    @classmethod
    def from_predicates(cls, sample, groups):
        """Build from (label, predicate) pairs applied to covariate rows."""
        labels, masks = [], []
        for lab, pred in groups:
            labels.append(lab)
            masks.append(np.array([bool(pred(row)) for row in sample.z]))
        return cls(labels, masks, n_total=sample.n)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class GroupCurves:
    """Per-group step functions on the event grid."""

    times: np.ndarray            # (m,)
    labels: list
    cdf: np.ndarray              # (k, m) group cdf values
    psi1: np.ndarray             # (k, m) density-average curve
    psi2: np.ndarray             # (k, m, d) parameter-sensitivity curve
    sd: np.ndarray               # (k, m) pointwise standard deviation curve
    shares: np.ndarray           # (k,)
    n: int
    clamped: int = 0             # grid points where the variance was clipped at 0
    f_matrix: np.ndarray = field(repr=False, default=None)  # (m, n) per-subject cdf
    masks: list = field(repr=False, default=None)           # per-group membership

    def group_index(self, label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise InputError(f"unknown group {label!r}") from None

    def _lookup(self, values: np.ndarray, t) -> np.ndarray:
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float),
                              side="right") - 1
        return np.where(idx >= 0, values[np.maximum(idx, 0)], 0.0)

    def cdf_at(self, label, t):
        """Right-continuous group cdf at arbitrary times (0 before the grid)."""
        return self._lookup(self.cdf[self.group_index(label)], t)

    def sd_at(self, label, t):
        """Pointwise dispersion at arbitrary times (0 before the grid)."""
        return self._lookup(self.sd[self.group_index(label)], t)


@dataclass
class QuantileCurve:
    """Quantile estimates and interval endpoints over a probability grid."""

    label: str
    p: np.ndarray
    q: np.ndarray                # point estimates (NaN when out of range)
    lower: np.ndarray
    upper: np.ndarray
    l_hat: np.ndarray            # inf-inversion points (= q where defined)
    u_hat: np.ndarray            # sup-inversion points
    out_of_range: np.ndarray     # bool, p not attained by the group cdf
    clipped_upper: np.ndarray    # bool, upper endpoint clipped to the grid end
    critical_value: float = np.nan


# -- transformations for interval construction --------------------------


@dataclass(frozen=True)
class GTransform:
    """Strictly increasing map from the real line onto (0, 1)."""

    name: str
    g: callable
    g_inv: callable
    g_prime: callable


def _cloglog() -> GTransform:
    return GTransform(
        name="cloglog",
        g=lambda x: 1.0 - np.exp(-np.exp(x)),
        g_inv=lambda p: np.log(-np.log1p(-p)),
        g_prime=lambda x: np.exp(x - np.exp(x)),
    )


def _logit() -> GTransform:
    return GTransform(
        name="logit",
        g=lambda x: 1.0 / (1.0 + np.exp(-x)),
        g_inv=lambda p: np.log(p / (1.0 - p)),
        g_prime=lambda x: np.exp(-x) / (1.0 + np.exp(-x)) ** 2,
    )


def _identity() -> GTransform:
    # Improper (not a cdf on the real line); useful for diagnostics.
    return GTransform(
        name="identity",
        g=lambda x: np.asarray(x, dtype=float),
        g_inv=lambda p: np.asarray(p, dtype=float),
        g_prime=lambda x: np.ones_like(np.asarray(x, dtype=float)),
    )


_TRANSFORMS = {"cloglog": _cloglog, "logit": _logit, "identity": _identity}


def get_transform(name: str | GTransform = "cloglog") -> GTransform:
    if isinstance(name, GTransform):
        return name
    try:
        return _TRANSFORMS[str(name).lower()]()
    except KeyError:
        raise InputError(
            f"unknown transform {name!r}; available: {sorted(_TRANSFORMS)}"
        ) from None


# -- group curves --------------------------------------------------------


def _require_efficient(fit: ScoreFit):
    if fit.phi_mode != "efficient":
        raise InputError(
            "group curves require a fit with phi_mode='efficient'; "
            f"got {fit.phi_mode!r}"
        )


def information_inverse(sigma: np.ndarray) -> np.ndarray:
    """Inverse of the score covariance, guarding (near-)rank deficiency."""
    eigvals = np.linalg.eigvalsh(sigma)
    if eigvals.min() <= 1e-12 * max(1.0, float(np.trace(sigma))):
        raise SingularityError(
            "score covariance is (numerically) singular; no covariate "
            "information, dispersion curves are undefined"
        )
    return np.linalg.inv(sigma)


def group_cdf(fit: ScoreFit, partition: Partition) -> GroupCurves:
    """Group cdf estimates on the event grid (cdf part only).

    The returned curves carry empty dispersion fields; use
    :func:`group_curves` for the full set.
    """
    return _build_curves(fit, partition, with_variance=False)


def group_curves(fit: ScoreFit, partition: Partition) -> GroupCurves:
    """Group cdf, sensitivity curves and pointwise standard deviations."""
    return _build_curves(fit, partition, with_variance=True)


def auxiliary_functions(fit: ScoreFit, partition: Partition):
    """Density-average and parameter-sensitivity curves per group.

    Returns ``(psi1, psi2)`` with shapes (k, m) and (k, m, d).
    """
    curves = _build_curves(fit, partition, with_variance=False)
    return curves.psi1, curves.psi2


def variance_curve(fit: ScoreFit, partition: Partition) -> np.ndarray:
    """Pointwise standard deviation of the normalized group-cdf error.

    Shape (k, m); the scale of the root-n-normalized error, as used in the
    interval and band radii.
    """
    return _build_curves(fit, partition, with_variance=True).sd


def _build_curves(fit: ScoreFit, partition: Partition,
                  with_variance: bool) -> GroupCurves:
    _require_efficient(fit)
    sample, family = fit.sample, fit.family
    transform = fit.transform
    m, n, d = transform.m, sample.n, sample.d
    k = len(partition)
    if partition.masks[0].shape[0] != n:
        raise InputError("partition masks do not match the sample size")

    prep = family.prepare(fit.theta, sample.z)
    f_matrix = np.empty((m, n))
    dens = np.empty((m, n))
    dcdf = np.empty((m, n, d))
    for j in range(m):
        x = transform.gamma[j]
        f_matrix[j] = prep.cdf(x)
        dens[j] = prep.density(x)
        dcdf[j] = prep.cdf_theta(x)

    cdf = np.empty((k, m))
    psi1 = np.empty((k, m))
    psi2 = np.empty((k, m, d))
    for g, mask in enumerate(partition.masks):
        share = partition.shares[g]
        cdf[g] = f_matrix[:, mask].sum(axis=1) / (n * share)
        psi1[g] = dens[:, mask].sum(axis=1) / (n * share)
        psi2[g] = (
            psi1[g][:, None] * transform.gamma_dot
            + dcdf[:, mask, :].sum(axis=1) / (n * share)
        )

    curves = GroupCurves(
        times=transform.times.copy(),
        labels=list(partition.labels),
        cdf=cdf,
        psi1=psi1,
        psi2=psi2,
        sd=np.zeros((k, m)),
        shares=partition.shares.copy(),
        n=n,
        f_matrix=f_matrix,
        masks=[mask.copy() for mask in partition.masks],
    )
    if with_variance:
        _attach_variance(fit, partition, curves)
    return curves


def _attach_variance(fit: ScoreFit, partition: Partition, curves: GroupCurves):
    """Pointwise standard deviation of the normalized group-cdf error.

    Sums the three uncorrelated contributions: averaging over group members
    at fixed parameters, the transformation fluctuation propagated through
    the density curve, and the parameter fluctuation propagated through the
    sensitivity curve.
    """
    transform = fit.transform
    m = transform.m
    n = curves.n
    sigma_inv = information_inverse(fit.sigma)
    k_diag = transform.kernel_diag()
    # covariance between the baseline fluctuation at t and the parameter
    # estimate: minus the inverse covariance times the adjusted weight
    psi_n = fit.phi + transform.gamma_dot          # (m, d)
    cov_w0_t = -(psi_n @ sigma_inv)                # (m, d)
    a1 = sigma_inv @ fit.sigma1 @ sigma_inv

    clamped = 0
    for g, mask in enumerate(partition.masks):
        share = partition.shares[g]
        f_sub = curves.f_matrix[:, mask]
        var1 = (f_sub**2).sum(axis=1) / (n * share**2) - curves.cdf[g] ** 2 / share
        var3 = np.einsum("mi,ij,mj->m", curves.psi2[g], a1, curves.psi2[g])
        cross = 2.0 * curves.psi1[g] * np.einsum(
            "mi,mi->m", curves.psi2[g], cov_w0_t
        )
        quad = np.einsum("mi,ij,mj->m", curves.psi2[g], sigma_inv, curves.psi2[g])
        var2 = k_diag * curves.psi1[g] ** 2 + cross + quad - var3
        total = var1 + var2 + var3
        neg = total < 0.0
        if np.any(neg):
            clamped += int(neg.sum())
            total = np.where(neg, 0.0, total)
        curves.sd[g] = np.sqrt(total)
    curves.clamped = clamped
    if clamped:
        warnings.warn(
            f"{clamped} grid points had negative plug-in variance; clipped to 0",
            RuntimeWarning,
            stacklevel=3,
        )


def quantile_curve(curves: GroupCurves, p_grid, label=None) -> list[QuantileCurve]:
    """Left-continuous inverse of the group cdf over a probability grid.

    Probabilities above the attained maximum of a group cdf are flagged
    out of range and produce NaN estimates.
    """
    p_grid = np.atleast_1d(np.asarray(p_grid, dtype=float))
    if np.any((p_grid <= 0.0) | (p_grid >= 1.0)):
        raise InputError("probabilities must lie strictly inside (0, 1)")
    out = []
    indices = (
        range(len(curves.labels))
        if label is None
        else [curves.group_index(label)]
    )
    for g in indices:
        cdf = curves.cdf[g]
        idx = np.searchsorted(cdf, p_grid, side="left")
        oor = idx >= cdf.size
        q = np.where(oor, np.nan, curves.times[np.minimum(idx, cdf.size - 1)])
        idx_u = np.searchsorted(cdf, p_grid, side="right")
        u_hat = np.where(idx_u >= cdf.size, np.nan,
                         curves.times[np.minimum(idx_u, cdf.size - 1)])
        out.append(
            QuantileCurve(
                label=curves.labels[g],
                p=p_grid.copy(),
                q=q,
                lower=q.copy(),
                upper=q.copy(),
                l_hat=q.copy(),
                u_hat=u_hat,
                out_of_range=oor,
                clipped_upper=np.zeros_like(oor),
            )
        )
    return out


def _invert_probability(curves: GroupCurves, g: int, p: float):
    """Quantile lookup with range clipping; returns (time, clipped_flag)."""
    cdf = curves.cdf[g]
    if p <= 0.0:
        return 0.0, False
    if p > cdf[-1]:
        return float(curves.times[-1]), True
    idx = int(np.searchsorted(cdf, p, side="left"))
    return float(curves.times[idx]), False


def pointwise_ci(curves: GroupCurves, quantiles: list[QuantileCurve],
                 alpha: float = 0.05, transform_g="cloglog",
                 critical_value: float | None = None) -> list[QuantileCurve]:
    """Attach transformation-based interval endpoints to quantile curves.

    The radius on the transformed probability scale is the standard
    deviation curve at the estimated quantile over ``sqrt(n)`` and the
    derivative of the transformation, times the normal critical value (or
    ``critical_value`` when given, as for simultaneous bands).
    """
    if not 0.0 < alpha < 1.0:
        raise InputError("alpha must lie in (0, 1)")
    gt = get_transform(transform_g)
    crit = norm.ppf(1.0 - alpha / 2.0) if critical_value is None else critical_value
    root_n = np.sqrt(curves.n)
    out = []
    for qc in quantiles:
        g = curves.group_index(qc.label)
        lower = np.empty_like(qc.q)
        upper = np.empty_like(qc.q)
        clipped = np.zeros(qc.q.size, dtype=bool)
        for i, p in enumerate(qc.p):
            if qc.out_of_range[i]:
                lower[i] = np.nan
                upper[i] = np.nan
                continue
            t_idx = int(np.searchsorted(curves.times, qc.q[i], side="left"))
            sd = curves.sd[g, t_idx]
            if sd == 0.0:
                lower[i] = qc.q[i]
                upper[i] = qc.q[i]
                continue
            x = gt.g_inv(p)
            radius = sd * crit / (root_n * gt.g_prime(x))
            p_lo = float(gt.g(x - radius))
            p_hi = float(gt.g(x + radius))
            lower[i], _ = _invert_probability(curves, g, p_lo)
            upper[i], clipped[i] = _invert_probability(curves, g, p_hi)
        out.append(
            QuantileCurve(
                label=qc.label,
                p=qc.p.copy(),
                q=qc.q.copy(),
                lower=lower,
                upper=upper,
                l_hat=qc.l_hat.copy(),
                u_hat=qc.u_hat.copy(),
                out_of_range=qc.out_of_range.copy(),
                clipped_upper=clipped,
                critical_value=float(crit),
            )
        )
    return out


def default_p_grid(p_min: float = 0.25, p_max: float = 0.75,
                   size: int = 101) -> np.ndarray:
    """Evenly spaced probability grid, endpoints included."""
    if not 0.0 < p_min < p_max < 1.0:
        raise InputError("need 0 < p_min < p_max < 1")
    return np.linspace(p_min, p_max, size)
