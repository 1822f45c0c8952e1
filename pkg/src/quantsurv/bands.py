"""Gaussian-multiplier simulation of the group-cdf error process.

Perturbing the estimated influence terms by independent standard normal
weights reproduces, conditionally on the data, the limit distribution of
the normalized group-cdf errors.  The standardized supremum of the
simulated process over the quantile window calibrates simultaneous bands
for the whole quantile function.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import InputError
from .estimator import ScoreFit
from .quantiles import (
    GroupCurves,
    QuantileCurve,
    information_inverse,
    pointwise_ci,
    quantile_curve,
)


@dataclass
class MultiplierDraw:
    """One set of multiplier deviates.

    ``v1`` and ``v2`` hold one deviate per subject, ``v3`` one per
    parameter; all are mutually independent standard normals, independent
    of the data.
    """

    v1: np.ndarray
    v2: np.ndarray
    v3: np.ndarray
    stream_id: int | None = None


@dataclass
class BandResult:
    """Simultaneous-band output."""

    alpha: float
    replicates: int
    u_star: float
    replicate_sups: np.ndarray
    bands: list[QuantileCurve] = field(default_factory=list)
    excluded_points: int = 0
    seed: int | None = None


def make_draw(n: int, d: int, seed, index: int = 0) -> MultiplierDraw:
    """Deviates for one replicate from a counter-based stream.

    The stream depends only on ``(seed, index)``, so replicates are
    reproducible in any order and across worker counts.
    """
    seq = np.random.SeedSequence(seed, spawn_key=(index,))
    rng = np.random.default_rng(seq)
    return MultiplierDraw(
        v1=rng.standard_normal(n),
        v2=rng.standard_normal(n),
        v3=rng.standard_normal(d),
        stream_id=index,
    )


def _w0_map(fit: ScoreFit) -> tuple[np.ndarray, np.ndarray]:
    """Linear map from event-subject deviates to the baseline fluctuation.

    Returns ``(map, event_subjects)``: row t, column e of the map gives
    1(T_e <= t) P(T_e, t) / S(T_e) / sqrt(n) for the e-th failing subject.
    """
    sample = fit.sample
    transform = fit.transform
    ev = [(i, j) for j, ids in enumerate(sample.event_ids) for i in ids]
    event_subjects = np.array([i for i, _ in ev], dtype=int)
    event_grid = np.array([j for _, j in ev], dtype=int)
    p = transform.prodint
    s_jump = transform.s_jump
    rows = np.arange(transform.m)[:, None]
    cols = event_grid[None, :]
    indic = cols <= rows
    ratio = p[rows] / p[cols]
    mapping = np.where(indic, ratio / s_jump[cols], 0.0) / np.sqrt(sample.n)
    return mapping, event_subjects


class _BandMachine:
    """Precomputed linear maps from deviates to the simulated process."""

    def __init__(self, fit: ScoreFit, curves: GroupCurves):
        if curves.f_matrix is None:
            raise InputError("curves must be built by group_curves()")
        sample = fit.sample
        transform = fit.transform
        self.n = sample.n
        self.d = sample.d
        self.m = transform.m
        self.curves = curves
        self.fit = fit
        self.w0_map, self.event_subjects = _w0_map(fit)

        rho_phi = transform.rho - transform.v[:, None] * fit.phi
        self.rho_phi_dn = rho_phi * transform.dn[:, None]
        self.sigma_inv = information_inverse(fit.sigma)
        self.sqrt_sigma1 = _psd_sqrt(fit.sigma1)

    def w0(self, v2: np.ndarray) -> np.ndarray:
        """Baseline fluctuation process; v2 has one column per replicate."""
        v2 = v2[:, None] if v2.ndim == 1 else v2
        return self.w0_map @ v2[self.event_subjects]

    def process(self, v1, v2, v3) -> np.ndarray:
        """Simulated group-cdf error process, shape (k, m, R)."""
        v1 = v1[:, None] if v1.ndim == 1 else v1
        v2 = v2[:, None] if v2.ndim == 1 else v2
        v3 = v3[:, None] if v3.ndim == 1 else v3
        curves = self.curves
        if curves.masks is None:
            raise InputError("curves lack group masks; build them via group_curves")
        k = len(curves.labels)
        r = v1.shape[1]
        w0 = self.w0(v2)                               # (m, R)
        j_int = self.rho_phi_dn.T @ w0                 # (d, R)
        t2_core = self.sigma_inv @ j_int               # (d, R)
        t3_core = self.sigma_inv @ (self.sqrt_sigma1 @ v3)   # (d, R)
        out = np.empty((k, self.m, r))
        root_n = np.sqrt(self.n)
        for g in range(k):
            mask = curves.masks[g]
            share = curves.shares[g]
            centered = curves.f_matrix[:, mask] - curves.cdf[g][:, None]
            w1 = (centered @ v1[mask]) / (root_n * share)
            # the parameter fluctuation driven by the baseline error enters
            # with a minus sign: larger baseline error pulls the parameter
            # estimate against the sensitivity direction
            w2 = w0 * curves.psi1[g][:, None] - curves.psi2[g] @ t2_core
            w3 = curves.psi2[g] @ t3_core
            out[g] = w1 + w2 + w3
        return out


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    eigval, eigvec = np.linalg.eigh(matrix)
    if np.any(eigval < -1e-10 * max(1.0, float(eigval.max(initial=0.0)))):
        warnings.warn(
            "covariance component has negative eigenvalues; clipping at 0",
            RuntimeWarning,
            stacklevel=3,
        )
    eigval = np.clip(eigval, 0.0, None)
    return (eigvec * np.sqrt(eigval)) @ eigvec.T


def multiplier_w0(fit: ScoreFit, draw: MultiplierDraw,
                  curves: GroupCurves | None = None) -> np.ndarray:
    """Simulated baseline fluctuation at the grid times for one draw."""
    del curves  # accepted for symmetry with multiplier_process
    mapping, event_subjects = _w0_map(fit)
    return mapping @ draw.v2[event_subjects]


def multiplier_process(fit: ScoreFit, curves: GroupCurves,
                       draw: MultiplierDraw) -> np.ndarray:
    """Simulated group-cdf error process for one draw, shape (k, m)."""
    machine = _BandMachine(fit, curves)
    return machine.process(draw.v1, draw.v2, draw.v3)[:, :, 0]


def _sup_window(curves: GroupCurves, p_range) -> tuple[np.ndarray, int]:
    """Boolean (k, m) mask of grid points inside the quantile window."""
    p1, p2 = p_range
    if not 0.0 < p1 < p2 < 1.0:
        raise InputError("p_range must satisfy 0 < p1 < p2 < 1")
    k, m = curves.cdf.shape
    mask = np.zeros((k, m), dtype=bool)
    excluded = 0
    for g in range(k):
        cdf = curves.cdf[g]
        lo = int(np.searchsorted(cdf, p1, side="left"))
        if lo >= m:
            raise InputError(
                f"group {curves.labels[g]!r} never reaches probability {p1}"
            )
        hi = int(np.searchsorted(cdf, p2, side="left"))
        if hi >= m:
            warnings.warn(
                f"group {curves.labels[g]!r} does not reach probability {p2}; "
                "window truncated at the last event time",
                RuntimeWarning,
                stacklevel=3,
            )
            hi = m - 1
        mask[g, lo:hi + 1] = True
        zero_sd = mask[g] & (curves.sd[g] <= 0.0)
        if np.any(zero_sd):
            excluded += int(zero_sd.sum())
            mask[g] &= curves.sd[g] > 0.0
    if not mask.any():
        raise InputError("no grid points with positive dispersion in the window")
    return mask, excluded


def _replicate_sups(machine: _BandMachine, window: np.ndarray, replicates: int,
                    seed, workers: int | None = None,
                    chunk: int = 256) -> np.ndarray:
    curves = machine.curves
    ratio_scale = np.where(curves.sd > 0.0, curves.sd, np.inf)

    def run_chunk(start: int, stop: int) -> np.ndarray:
        idx = range(start, stop)
        draws = [make_draw(machine.n, machine.d, seed, i) for i in idx]
        v1 = np.column_stack([dr.v1 for dr in draws])
        v2 = np.column_stack([dr.v2 for dr in draws])
        v3 = np.column_stack([dr.v3 for dr in draws])
        proc = machine.process(v1, v2, v3)          # (k, m, r)
        standardized = np.abs(proc) / ratio_scale[:, :, None]
        standardized = np.where(window[:, :, None], standardized, -np.inf)
        return standardized.max(axis=(0, 1))

    bounds = [(s, min(s + chunk, replicates)) for s in range(0, replicates, chunk)]
    if workers is None:
        workers = default_workers()
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: run_chunk(*b), bounds))
    else:
        parts = [run_chunk(*b) for b in bounds]
    return np.concatenate(parts)


def default_workers() -> int:
    """Worker count from QUANTSURV_THREADS (default 1)."""
    raw = os.environ.get("QUANTSURV_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        warnings.warn(f"ignoring invalid QUANTSURV_THREADS={raw!r}", RuntimeWarning)
        return 1


def critical_value(fit: ScoreFit, curves: GroupCurves, p_range=(0.25, 0.75),
                   alpha: float = 0.05, replicates: int = 1000, seed=0,
                   workers: int | None = None) -> BandResult:
    """Critical value of the standardized supremum over the quantile window.

    The estimate is the empirical ``1 - alpha`` quantile (the
    ``ceil(replicates * (1 - alpha))``-th order statistic) of the
    replicate suprema.
    """
    if replicates < 1:
        raise InputError("need at least one replicate")
    if not 0.0 < alpha < 1.0:
        raise InputError("alpha must lie in (0, 1)")
    machine = _BandMachine(fit, curves)
    window, excluded = _sup_window(curves, p_range)
    sups = _replicate_sups(machine, window, replicates, seed, workers)
    order = int(np.ceil(replicates * (1.0 - alpha)))
    u_star = float(np.sort(sups)[order - 1])
    return BandResult(
        alpha=alpha,
        replicates=replicates,
        u_star=u_star,
        replicate_sups=sups,
        excluded_points=excluded,
        seed=seed if isinstance(seed, int) else None,
    )


def simultaneous_bands(fit: ScoreFit, curves: GroupCurves, p_grid,
                       alpha: float = 0.05, replicates: int = 1000, seed=0,
                       transform_g="cloglog", p_range=None,
                       workers: int | None = None) -> BandResult:
    """Simultaneous confidence bands for the grouped quantile function.

    Bands use the same transformed-scale construction as the pointwise
    intervals with the simulated critical value in place of the normal
    percentile, so they enclose the pointwise intervals whenever the
    critical value exceeds it.
    """
    p_grid = np.atleast_1d(np.asarray(p_grid, dtype=float))
    if p_range is None:
        p_range = (float(p_grid.min()), float(p_grid.max()))
    result = critical_value(fit, curves, p_range=p_range, alpha=alpha,
                            replicates=replicates, seed=seed, workers=workers)
    quantiles = quantile_curve(curves, p_grid)
    result.bands = pointwise_ci(curves, quantiles, alpha=alpha,
                                transform_g=transform_g,
                                critical_value=result.u_star)
    return result


def normal_critical_value(alpha: float) -> float:
    """Two-sided normal critical value at level alpha."""
    return float(norm.ppf(1.0 - alpha / 2.0))
