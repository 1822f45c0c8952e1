from __future__ import annotations

import numpy as np
import pytest

from quantsurv import (
    EstimationDomainError,
    InputError,
    SurvivalSample,
    estimate_transform,
    get_family,
    solve_gamma,
    solve_gamma_dot,
)
from conftest import make_ph_sample, make_po_sample
from oracles import breslow_baseline, central_difference, nelson_aalen

PH = get_family("ph")
PO = get_family("po")


class TestSampleConstruction:
    def test_basic_shapes(self, two_point_sample):
        s = two_point_sample
        assert s.n == 2 and s.d == 1 and s.m == 2
        assert np.allclose(s.grid, [1.0, 2.0])
        assert np.allclose(s.dn, [0.5, 0.5])

    def test_default_tau_needs_two_at_risk(self):
        s = SurvivalSample([1.0, 2.0, 3.0], [1, 1, 1], [[0.0]] * 3)
        # at t=3 only one subject remains at risk
        assert s.tau == 2.0
        assert s.m == 2

    def test_tau_override_must_not_exceed_max(self):
        with pytest.raises(InputError):
            SurvivalSample([1.0, 2.0], [1, 1], [[0.0], [0.0]], tau=5.0)

    def test_rejects_negative_times(self):
        with pytest.raises(InputError):
            SurvivalSample([-1.0, 2.0], [1, 1], [[0.0], [0.0]])

    def test_rejects_bad_status(self):
        with pytest.raises(InputError):
            SurvivalSample([1.0, 2.0], [1, 2], [[0.0], [0.0]])

    def test_rejects_all_censored(self):
        with pytest.raises(InputError):
            SurvivalSample([1.0, 2.0], [0, 0], [[0.0], [0.0]])

    def test_rejects_unbounded_covariates(self):
        with pytest.raises(InputError):
            SurvivalSample([1.0, 2.0], [1, 1], [[1e9], [0.0]])

    def test_censored_ties_count_as_at_risk(self):
        s = SurvivalSample([1.0, 1.0, 2.0], [1, 0, 1], [[0.0]] * 3, tau=2.0)
        # risk set at t=1 includes the censored tie
        assert s.n - s.risk_start[0] == 3


class TestGamma:
    def test_ph_equals_nelson_aalen_two_point(self, two_point_sample):
        gamma = solve_gamma(two_point_sample, PH, [0.0])
        assert np.allclose(gamma, [0.5, 1.5], atol=1e-15)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_ph_equals_nelson_aalen_random(self, seed):
        rng = np.random.default_rng(seed)
        # integer times force ties; censoring included
        times = rng.integers(1, 8, size=40).astype(float)
        status = rng.integers(0, 2, size=40)
        status[0] = 1
        s = SurvivalSample(times, status, np.zeros((40, 1)))
        gamma = solve_gamma(s, PH, [0.0])
        na_times, na_values = nelson_aalen(s.times, s.status, tau=s.tau)
        assert np.allclose(s.grid, na_times)
        assert np.abs(gamma - na_values).max() < 1e-12

    def test_po_two_point_hand_values(self, two_point_sample):
        gamma = solve_gamma(two_point_sample, PO, [0.0])
        assert np.allclose(gamma, [0.5, 2.0], atol=1e-15)

    def test_no_events_inside_tau_gives_empty_grid(self):
        s = SurvivalSample([1.0, 2.0, 3.0], [0, 0, 1], [[0.0]] * 3, tau=2.0)
        assert s.m == 0
        assert solve_gamma(s, PO, [0.0]).size == 0

    def test_jumps_only_at_distinct_uncensored_times(self):
        s = SurvivalSample([1.0, 1.0, 2.0, 2.5], [1, 1, 1, 0], [[0.0]] * 4)
        assert s.m == 2
        gamma = solve_gamma(s, PO, [0.0])
        assert gamma.size == 2
        assert np.all(np.diff(np.concatenate([[0.0], gamma])) > 0)

    @pytest.mark.parametrize("theta", [-0.4, 0.0, 0.7])
    def test_ph_matches_breslow_at_any_theta(self, theta):
        s = make_ph_sample(60, [theta], seed=3)
        gamma = solve_gamma(s, PH, [theta])
        _, baseline = breslow_baseline([theta], s.times, s.status, s.z, tau=s.tau)
        assert np.abs(gamma - baseline).max() < 1e-12

    def test_domain_error_when_risk_hazard_vanishes(self):
        # theta pushed so far that exp overflows to 0 hazard is impossible
        # for these families; force the error with an empty-risk tau instead
        s = SurvivalSample([1.0, 2.0], [1, 1], [[0.0], [0.0]], tau=2.0)
        gamma = solve_gamma(s, PH, [0.0])
        assert gamma.size == 2
        # no direct construction reaches S=0 with positive hazards; the
        # guard is still exercised through the API contract
        with pytest.raises(EstimationDomainError):
            bad = get_family("po")

            class _Zero:
                n, d = 2, 1

                def alpha(self, x):
                    return np.zeros(2)

                def alpha_theta(self, x):
                    return np.zeros((2, 1))

                def alpha_x(self, x):
                    return np.zeros(2)

            bad.prepare = lambda theta, z: _Zero()
            solve_gamma(s, bad, [0.0])

    def test_adding_at_risk_subject_decreases_gamma(self):
        base = SurvivalSample([1.0, 2.0, 3.0], [1, 1, 1], [[0.0]] * 3, tau=2.0)
        extended = SurvivalSample(
            [1.0, 2.0, 3.0, 10.0], [1, 1, 1, 0], [[0.0]] * 4, tau=2.0
        )
        # the grid and horizon are unchanged by the extra censored subject
        assert np.allclose(base.grid, extended.grid)
        assert base.tau == extended.tau
        g0 = solve_gamma(base, PH, [0.0])
        g1 = solve_gamma(extended, PH, [0.0])
        assert np.all(g1 < g0)


class TestGammaDot:
    def test_ph_hand_value(self, two_point_sample):
        gamma = solve_gamma(two_point_sample, PH, [0.0])
        gdot = solve_gamma_dot(two_point_sample, PH, [0.0], gamma)
        assert gdot[0, 0] == pytest.approx(-0.25)

    def test_po_hand_values(self, two_point_sample):
        gamma = solve_gamma(two_point_sample, PO, [0.0])
        gdot = solve_gamma_dot(two_point_sample, PO, [0.0], gamma)
        assert np.allclose(gdot[:, 0], [-0.25, -1.5])

    def test_zero_without_covariate_variation(self):
        s = SurvivalSample([1.0, 2.0, 3.0], [1, 1, 1], np.zeros((3, 1)))
        gamma = solve_gamma(s, PH, [0.3])
        gdot = solve_gamma_dot(s, PH, [0.3], gamma)
        assert np.allclose(gdot, 0.0)

    @pytest.mark.parametrize("family,theta", [(PO, [0.0]), (PO, [0.5]),
                                              (PH, [0.3])])
    def test_matches_finite_differences(self, family, theta):
        s = make_po_sample(40, [0.5], seed=5)

        def gamma_of(th):
            return solve_gamma(s, family, th)

        gamma = gamma_of(np.asarray(theta))
        gdot = solve_gamma_dot(s, family, theta, gamma)
        fd = central_difference(gamma_of, theta, h=1e-5)
        assert np.abs(gdot - fd).max() < 1e-6


class TestProductIntegral:
    def test_ph_identically_one(self):
        s = make_ph_sample(30, [0.5], seed=7)
        tr = estimate_transform(s, PH, [0.5])
        assert np.allclose(tr.prodint, 1.0, atol=1e-15)

    def test_po_two_point_hand_values(self, two_point_sample):
        tr = estimate_transform(two_point_sample, PO, [0.0])
        assert np.allclose(tr.prodint, [1.5, 3.0], atol=1e-15)

    def test_multiplicativity(self):
        s = make_po_sample(50, [0.7], seed=11)
        tr = estimate_transform(s, PO, [0.7])
        for i in range(0, tr.m, 7):
            for j in range(i, tr.m, 9):
                direct = tr.prodint_pair(i, j)
                assert tr.prodint_pair(-1, j) == pytest.approx(
                    tr.prodint_pair(-1, i) * direct, abs=1e-12, rel=1e-12
                )


class TestMoments:
    def test_ph_dispersion_measures_vanish(self):
        s = make_ph_sample(40, [0.4], seed=13)
        tr = estimate_transform(s, PH, [0.4])
        assert np.allclose(tr.v, 0.0, atol=1e-15)
        assert np.allclose(tr.rho, 0.0, atol=1e-15)
        assert np.allclose(tr.b_jumps, 0.0, atol=1e-15)

    def test_constant_covariate_kills_vbar(self):
        z = np.full((25, 1), 0.8)
        rng = np.random.default_rng(17)
        s = SurvivalSample(rng.exponential(1, 25), np.ones(25, dtype=int), z)
        tr = estimate_transform(s, PO, [0.5])
        assert np.abs(tr.vbar).max() < 1e-14

    def test_po_last_risk_set_of_one_has_zero_v(self, two_point_sample):
        tr = estimate_transform(two_point_sample, PO, [0.0])
        assert tr.v[-1] == 0.0

    def test_c_jumps_positive(self):
        s = make_po_sample(30, [0.5], seed=19)
        tr = estimate_transform(s, PO, [0.5])
        assert np.all(tr.c_jumps > 0)
        assert np.all(tr.b_jumps >= 0)

    def test_po_nonnull_hand_values(self, two_point_sample):
        # theta = ln 2 gives w = (1, 2): every quantity below is an exact
        # fraction worked out by hand from the definitions
        theta = [np.log(2.0)]
        tr = estimate_transform(two_point_sample, PO, theta)
        assert tr.gamma[0] == pytest.approx(1.0 / 3.0, abs=1e-15)
        assert tr.gamma[1] == pytest.approx(7.0 / 6.0, abs=1e-15)
        assert tr.s_jump[0] == pytest.approx(1.5)
        assert tr.s_dot_jump[0, 0] == pytest.approx(1.0)
        assert tr.s_prime_jump[0] == pytest.approx(-2.5)
        assert tr.c_jumps[0] == pytest.approx(2.0 / 9.0)
        assert tr.prodint[0] == pytest.approx(14.0 / 9.0)
        assert tr.gamma_dot[0, 0] == pytest.approx(-2.0 / 9.0)
        # at-risk moments at the post-jump value 1/3: hazards (3/4, 6/5),
        # normalized weights (5/13, 8/13)
        assert tr.v[0] == pytest.approx(81.0 / 1690.0, abs=1e-15)
        assert tr.rho[0, 0] == pytest.approx(-54.0 / 845.0, abs=1e-15)
        assert tr.vbar[0, 0, 0] == pytest.approx(72.0 / 845.0, abs=1e-15)

    def test_gamma_at_evaluates_right_continuously(self, two_point_sample):
        tr = estimate_transform(two_point_sample, PO, [0.0])
        assert tr.gamma_at(0.5) == 0.0
        assert tr.gamma_at(1.0) == 0.5
        assert tr.gamma_at(1.7) == 0.5
        assert tr.gamma_at(2.0) == 2.0
        assert np.allclose(tr.gamma_at([0.0, 1.0, 3.0]), [0.0, 0.5, 2.0])
