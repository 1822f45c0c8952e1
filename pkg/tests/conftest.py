from __future__ import annotations

import numpy as np
import pytest

from quantsurv import SurvivalSample


@pytest.fixture
def two_point_sample() -> SurvivalSample:
    """Two uncensored subjects at times 1 and 2 with z = 0 and 1."""
    return SurvivalSample([1.0, 2.0], [1, 1], [[0.0], [1.0]], tau=2.0)


def make_ph_sample(n: int, theta, seed: int, censor_upper: float = 3.0,
                   d: int | None = None) -> SurvivalSample:
    """Exponential failure times with rate exp(theta'z), uniform censoring."""
    rng = np.random.default_rng(seed)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = d or theta.size
    z = rng.uniform(-1.0, 1.0, size=(n, d))
    t_fail = rng.exponential(1.0, size=n) / np.exp(z @ theta)
    t_cens = rng.uniform(0.0, censor_upper, size=n)
    times = np.minimum(t_fail, t_cens)
    status = (t_fail <= t_cens).astype(int)
    return SurvivalSample(times, status, z)


def make_po_sample(n: int, theta, seed: int, censor_upper: float = 4.0) -> SurvivalSample:
    """Log-logistic scale model with uniform censoring."""
    rng = np.random.default_rng(seed)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    z = rng.integers(0, 2, size=(n, theta.size)).astype(float)
    u = rng.uniform(size=n)
    t_fail = np.exp(-(z @ theta)) * u / (1.0 - u)
    t_cens = rng.uniform(0.0, censor_upper, size=n)
    times = np.minimum(t_fail, t_cens)
    status = (t_fail <= t_cens).astype(int)
    return SurvivalSample(times, status, z)
