"""Acceptance suite: one test per numbered criterion.

Each test prints a single PASS/FAIL line (visible with ``pytest -s`` or on
failure).  Criterion 8 contains two sub-checks that fail by design: the
pinned reference values for the middle performance-status group are
inconsistent with the shipped dataset itself (the raw Kaplan-Meier median
for that group is 52 days, far from the pinned 29); the failing tests
report the discrepancy instead of hiding it.  See tests/test_acceptance.py
docstrings and the failure messages for the full analysis.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from quantsurv import (
    Censoring,
    DiscreteCovariates,
    Partition,
    SimScenario,
    SurvivalSample,
    fit,
    fredholm_residual,
    generate,
    get_family,
    group_curves,
    quantile_curve,
    run_coverage,
    simultaneous_bands,
    solve_gamma,
    solve_phi,
    solve_weight,
)
from quantsurv.bands import _BandMachine, make_draw, normal_critical_value
from quantsurv.cli import main as cli_main
from quantsurv.estimator import estimate_transform
from quantsurv.io import coefficient_table, ingest, load_config
from conftest import make_ph_sample, make_po_sample
from oracles import (
    breslow_baseline,
    central_difference,
    cox_newton,
    dense_tridiagonal,
    nelson_aalen,
)


def report(criterion: str, ok: bool, details: str) -> None:
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {details}")


# -- criterion 1: Cox reduction ------------------------------------------


def test_criterion_1_cox_reduction():
    start = time.time()
    worst_theta, worst_gamma = 0.0, 0.0
    for seed in range(20):
        s = make_ph_sample(50, [0.6, -0.4], seed=1000 + seed)
        result = fit(s, "ph", theta0=np.zeros(2))
        oracle = cox_newton(s.times, s.status, s.z, tau=s.tau)
        worst_theta = max(worst_theta, float(np.abs(result.theta - oracle).max()))
        _, baseline = breslow_baseline(result.theta, s.times, s.status, s.z,
                                       tau=s.tau)
        worst_gamma = max(worst_gamma,
                          float(np.abs(result.transform.gamma - baseline).max()))
    elapsed = time.time() - start
    ok = worst_theta < 1e-6 and worst_gamma < 1e-10 and elapsed < 1.0
    report("1 (Cox reduction)", ok,
           f"max|theta diff|={worst_theta:.2e}, max|baseline diff|="
           f"{worst_gamma:.2e}, runtime={elapsed:.2f}s")
    assert worst_theta < 1e-6
    assert worst_gamma < 1e-10
    assert elapsed < 1.0


# -- criterion 2: Nelson-Aalen reduction ----------------------------------


def test_criterion_2_nelson_aalen_reduction():
    datasets = [
        SurvivalSample([1.0, 2.0], [1, 1], [[0.0], [1.0]], tau=2.0),
        make_ph_sample(40, [0.5], seed=3),
        make_po_sample(60, [0.7], seed=4),
    ]
    rng = np.random.default_rng(9)
    times = rng.integers(1, 9, size=50).astype(float)
    status = rng.integers(0, 2, size=50)
    status[:3] = 1
    datasets.append(SurvivalSample(times, status, rng.uniform(-1, 1, (50, 1))))
    spec, _ = load_config("veteran")
    va_sample, _, _ = ingest(spec)
    datasets.append(va_sample)

    worst = 0.0
    for s in datasets:
        gamma = solve_gamma(s, get_family("ph"), np.zeros(s.d))
        na_times, na_values = nelson_aalen(s.times, s.status, tau=s.tau)
        assert np.allclose(s.grid, na_times)
        worst = max(worst, float(np.abs(gamma - na_values).max()))
    ok = worst < 1e-12
    report("2 (Nelson-Aalen reduction)", ok, f"max deviation={worst:.2e} over "
           f"{len(datasets)} datasets")
    assert worst < 1e-12


# -- criterion 3: Fredholm correctness ------------------------------------


def test_criterion_3_fredholm():
    worst_resid = 0.0
    fits = []
    for seed, theta0 in [(11, 0.6), (12, 1.0), (13, -0.8)]:
        s = make_po_sample(80, [theta0], seed=seed)
        result = fit(s, "po")
        fits.append(result)
        worst_resid = max(worst_resid, result.fredholm_residual)
    spec, _ = load_config("veteran")
    va_sample, _, _ = ingest(spec)
    va_fit = fit(va_sample, "po")
    worst_resid = max(worst_resid, va_fit.fredholm_residual)
    # off-root evaluations too
    for result in fits:
        tr = estimate_transform(result.sample, result.family,
                                result.theta + 0.3)
        sol = solve_weight(tr)
        worst_resid = max(worst_resid, fredholm_residual(sol, tr))

    rng = np.random.default_rng(21)
    worst_dense = 0.0
    for m in (10, 80, 200):
        c = rng.uniform(0.5, 3.0, m)
        b = rng.uniform(0.0, 2.0, m)
        diag = c + b
        diag[:-1] += c[1:]
        offdiag = -c[1:]
        p = rng.uniform(0.5, 2.0, m)
        rho = rng.normal(size=(m, 2))
        sol = solve_phi(diag, offdiag, rho, p, np.zeros((m, 2)))
        dense = p[:, None] * np.linalg.solve(dense_tridiagonal(diag, offdiag),
                                             p[:, None] * rho)
        worst_dense = max(worst_dense, float(np.abs(sol.psi - dense).max()))
    ok = worst_resid < 1e-10 and worst_dense < 1e-10
    report("3 (Fredholm correctness)", ok,
           f"max residual={worst_resid:.2e}, max tridiag-vs-dense="
           f"{worst_dense:.2e}")
    assert worst_resid < 1e-10
    assert worst_dense < 1e-10


# -- criterion 4: derivative consistency ----------------------------------


def test_criterion_4_derivative_consistency():
    s = make_po_sample(90, [0.8], seed=31)
    theta = np.array([0.5])

    def gamma_of(th):
        return solve_gamma(s, get_family("po"), th)

    tr = estimate_transform(s, get_family("po"), theta)
    fd_gamma = central_difference(gamma_of, theta, h=1e-5)
    gdot_err = float(np.abs(tr.gamma_dot - fd_gamma).max())

    result = fit(s, "po")
    masks = [np.all(np.isclose(s.z, v), axis=1) for v in ([0.0], [1.0])]
    partition = Partition(["z0", "z1"], masks)
    curves = group_curves(result, partition)
    h = 1e-5

    def group_cdf_at(th):
        tr_local = estimate_transform(s, result.family, th)
        prep = result.family.prepare(np.atleast_1d(th), s.z)
        out = np.empty((2, tr_local.m))
        for g, mask in enumerate(masks):
            count = mask.sum()
            for j, x in enumerate(tr_local.gamma):
                out[g, j] = prep.cdf(x)[mask].sum() / count
        return out

    up = group_cdf_at(result.theta + h)
    down = group_cdf_at(result.theta - h)
    fd_psi2 = (up - down) / (2 * h)
    psi2_err = float(np.abs(curves.psi2[:, :, 0] - fd_psi2).max())

    ok = gdot_err < 1e-6 and psi2_err < 1e-4
    report("4 (derivative consistency)", ok,
           f"gradient FD error={gdot_err:.2e}, sensitivity FD error="
           f"{psi2_err:.2e}")
    assert gdot_err < 1e-6
    assert psi2_err < 1e-4


# -- criteria 5 and 6: Monte Carlo calibration ----------------------------


def po_scenario(n: int, replications: int, seed: int) -> SimScenario:
    # censoring chosen light enough (~18%) that the 0.75 quantile stays
    # invertible in essentially every replicate; the coverage numbers then
    # measure band calibration, not inversion-range failures
    return SimScenario(
        family="po",
        theta0=(1.0,),
        n=n,
        covariates=DiscreteCovariates(support=((0.0,), (1.0,)),
                                      probs=(0.5, 0.5)),
        censoring=Censoring(kind="uniform", bound=10.0),
        replications=replications,
        seed=seed,
    )


@pytest.mark.slow
def test_criterion_5_variance_calibration():
    start = time.time()
    scenario = po_scenario(n=500, replications=200, seed=2024)
    rep = run_coverage(scenario, with_bands=False)
    assert rep.n_failed <= 0.1 * scenario.replications
    ratio = rep.theta_se_ratio
    bias = float(np.abs(rep.theta_mean - 1.0).max())

    sample = generate(scenario, 0)
    result = fit(sample, "po")
    masks = [np.all(np.isclose(sample.z, v), axis=1) for v in ([0.0], [1.0])]
    curves = group_curves(result, Partition(["z0", "z1"], masks))
    machine = _BandMachine(result, curves)
    r = 4000
    draws = [make_draw(sample.n, sample.d, (77, i), 0) for i in range(r)]
    v1 = np.column_stack([d.v1 for d in draws])
    v2 = np.column_stack([d.v2 for d in draws])
    v3 = np.column_stack([d.v3 for d in draws])
    proc = machine.process(v1, v2, v3)
    emp = proc.var(axis=2, ddof=1)
    worst_rel = 0.0
    for g in range(2):
        interior = (curves.cdf[g] > 0.25) & (curves.cdf[g] < 0.75)
        rel = (np.abs(emp[g][interior] - curves.sd[g][interior] ** 2)
               / curves.sd[g][interior] ** 2)
        worst_rel = max(worst_rel, float(rel.max()))
    elapsed = time.time() - start

    ok = (np.all(ratio >= 0.8) and np.all(ratio <= 1.25)
          and bias < 0.08 and worst_rel < 0.10)
    report("5 (variance calibration)", ok,
           f"se/sd ratio={ratio.round(3)}, |bias|={bias:.3f}, "
           f"multiplier-vs-plugin max rel={worst_rel:.3f}, "
           f"failures={rep.n_failed}/200, runtime={elapsed:.0f}s")
    assert np.all(ratio >= 0.8) and np.all(ratio <= 1.25)
    assert bias < 0.08
    assert worst_rel < 0.10


@pytest.mark.slow
def test_criterion_6_coverage():
    start = time.time()
    scenario = po_scenario(n=200, replications=500, seed=777)
    rep = run_coverage(scenario, p_targets=(0.5,), alpha=0.05,
                       band_replicates=500)
    assert rep.n_failed <= 0.1 * scenario.replications
    ci_cov = {t.label: t.ci_coverage for t in rep.targets}
    band_cov = {t.label: t.band_coverage for t in rep.targets}
    elapsed = time.time() - start

    pointwise_ok = all(0.91 <= c <= 0.98 for c in ci_cov.values())
    band_ok = 0.91 <= rep.band_joint_coverage <= 0.99
    paired_ok = all(band_cov[k] >= ci_cov[k] for k in ci_cov)
    ok = pointwise_ok and band_ok and paired_ok
    report("6 (coverage)", ok,
           f"median CI coverage={ {k: round(v, 3) for k, v in ci_cov.items()} }, "
           f"band joint={rep.band_joint_coverage:.3f}, "
           f"band-at-median={ {k: round(v, 3) for k, v in band_cov.items()} }, "
           f"median u*={rep.u_star_median:.2f}, "
           f"failures={rep.n_failed}/500, runtime={elapsed:.0f}s")
    assert pointwise_ok, f"pointwise coverage outside [0.91, 0.98]: {ci_cov}"
    assert band_ok, f"band joint coverage outside [0.91, 0.99]: {rep.band_joint_coverage}"
    assert paired_ok, "band coverage fell below pointwise coverage on paired seeds"
    # simultaneity premium: the simulated critical value typically exceeds
    # the pointwise normal percentile
    assert rep.u_star_median > normal_critical_value(0.05)


# -- criteria 7 and 8: reference-data reproduction ------------------------

TABLE_ESTIMATES = {"PS": -1.049, "celltype:squamous": -0.246,
                   "celltype:smallcell": 1.345, "celltype:adeno": 1.275}
TABLE_SES = {"PS": 0.045, "celltype:squamous": 0.428,
             "celltype:smallcell": 0.304, "celltype:adeno": 0.342}
TABLE_PVALUES = {"PS": 1e-5, "celltype:squamous": 0.71,
                 "celltype:smallcell": 0.01, "celltype:adeno": 0.02}


@pytest.fixture(scope="module")
def va_fit():
    spec, _ = load_config("veteran")
    sample, partition, meta = ingest(spec)
    result = fit(sample, "po")
    return result, partition, meta


def test_criterion_7_reference_coefficients(va_fit):
    result, _, meta = va_fit
    table = coefficient_table(meta["covariates"], result).set_index("term")
    assert result.converged

    sign_ok = all(
        np.sign(table.loc[k, "estimate"]) == np.sign(v)
        for k, v in TABLE_ESTIMATES.items()
    )
    est_err = {k: abs(table.loc[k, "estimate"] - v)
               for k, v in TABLE_ESTIMATES.items()}
    est_ok = all(e < 0.2 for e in est_err.values())

    # significance pattern at the 5% level: PS and the two aggressive
    # tumor types significant, squamous not
    sig = {k: table.loc[k, "p_value"] < 0.05 for k in TABLE_ESTIMATES}
    sig_ok = (sig["PS"] and sig["celltype:smallcell"] and sig["celltype:adeno"]
              and not sig["celltype:squamous"])
    p_ok = (
        table.loc["PS", "p_value"] < TABLE_PVALUES["PS"]
        and abs(table.loc["celltype:squamous", "p_value"] - 0.71) < 0.05
        and abs(table.loc["celltype:smallcell", "p_value"] - 0.01) < 0.01
        and abs(table.loc["celltype:adeno", "p_value"] - 0.02) < 0.01
    )

    se_ratio = {k: table.loc[k, "se"] / v for k, v in TABLE_SES.items()}
    se_flagged = {k: r for k, r in se_ratio.items() if not 0.5 <= r <= 1.5}
    # The reference table's own p-values are consistent with OUR standard
    # errors (reproduced to ~0.01 above), not with its printed se column;
    # the se discrepancies are therefore reported, not asserted away.
    ok = sign_ok and est_ok and sig_ok and p_ok
    report(
        "7 (reference coefficients)", ok,
        f"max|estimate diff|={max(est_err.values()):.3f}, signs "
        f"{'ok' if sign_ok else 'WRONG'}, significance pattern "
        f"{'ok' if sig_ok else 'WRONG'}, p-values reproduce the reference "
        f"table to ~0.01; se ratios vs printed column {se_flagged} flagged "
        f"as a reference-table inconsistency (its p-values imply our ses)",
    )
    assert sign_ok
    assert est_ok, est_err
    assert sig_ok
    assert p_ok
    # at least one printed se is internally consistent and must match
    assert 0.5 <= se_ratio["celltype:squamous"] <= 1.5


@pytest.fixture(scope="module")
def va_bands(va_fit):
    result, partition, _ = va_fit
    curves = group_curves(result, partition)
    p_grid = np.linspace(0.25, 0.75, 101)
    band = simultaneous_bands(result, curves, p_grid, alpha=0.05,
                              replicates=1000, seed=0)
    quantiles = quantile_curve(curves, [0.5])
    medians = {q.label: float(q.q[0]) for q in quantiles}
    band_at_median = {
        b.label: (float(b.lower[list(b.p).index(0.5)]),
                  float(b.upper[list(b.p).index(0.5)]))
        for b in band.bands
    }
    return medians, band_at_median, band.u_star


def test_criterion_8_reference_medians_attainable_part(va_bands):
    medians, band_at_median, u_star = va_bands
    hosp = medians["hospitalized"]
    able = medians["able"]
    ordering_ok = (
        medians["hospitalized"] <= medians["partial"] < medians["able"]
        and able >= 2.0 * medians["partial"]
        and able >= 2.0 * hosp
    )
    # the two poor-prognosis groups are statistically indistinguishable:
    # their simultaneous bands overlap
    lo1, hi1 = band_at_median["hospitalized"]
    lo2, hi2 = band_at_median["partial"]
    overlap_ok = max(lo1, lo2) <= min(hi1, hi2)
    hosp_ok = abs(hosp - 25.0) <= 0.2 * 25.0
    mid_ok = (band_at_median["hospitalized"][0] <= 28.5
              <= band_at_median["hospitalized"][1])
    mid_able_ok = band_at_median["able"][0] <= 107.5 <= band_at_median["able"][1]
    ok = ordering_ok and overlap_ok and hosp_ok and mid_ok and mid_able_ok
    report("8a (reference medians, attainable checks)", ok,
           f"medians={medians}, bands at median={band_at_median}, "
           f"u*={u_star:.2f}")
    assert hosp_ok, f"hospitalized median {hosp} not within 20% of 25"
    assert ordering_ok
    assert overlap_ok
    assert mid_ok
    assert mid_able_ok


def test_criterion_8_reference_medians_pinned_targets(va_bands):
    """Pinned targets (25, 29, 110) at +-20%, as stated.

    EXPECTED TO FAIL for the middle group and (marginally) the third: the
    pinned 29-day median for the partially-confined group is inconsistent
    with the shipped data, whose raw Kaplan-Meier median for PS in [40,70)
    is 52 days; every estimator variant (grouped model inversion, PS-only
    model, group-mean covariate inversion, plain Kaplan-Meier) puts this
    group between 42 and 53 days.  The pinned intervals (width ~10 days)
    are also narrower than any attainable interval at this sample size.
    The discrepancy is reported rather than hidden; see the attainable-part
    test above for the checks the data support.
    """
    medians, band_at_median, _ = va_bands
    targets = {"hospitalized": 25.0, "partial": 29.0, "able": 110.0}
    errs = {k: abs(medians[k] - v) / v for k, v in targets.items()}
    ok = all(e <= 0.2 for e in errs.values())
    mid_in = {k: band_at_median[k][0] <= {"hospitalized": 28.5, "partial": 30.0,
                                          "able": 107.5}[k]
              <= band_at_median[k][1] for k in targets}
    report("8b (reference medians, pinned targets)", ok and all(mid_in.values()),
           f"relative errors={ {k: round(v, 3) for k, v in errs.items()} }, "
           f"band contains pinned midpoint={mid_in}; middle-group target "
           "inconsistent with the dataset (raw KM median 52)")
    assert ok, (
        f"pinned-median deviations {errs}: the 29-day target for the middle "
        "group contradicts the dataset (KM median 52); documented, not hidden"
    )
    assert all(mid_in.values())


# -- criterion 9: determinism ---------------------------------------------


def test_criterion_9_determinism(tmp_path):
    args = ["bands", "--config", "veteran", "--replicates", "64", "--seed",
            "17"]
    outs = []
    for name, workers in [("w1", "1"), ("w4", "4"), ("w1b", "1")]:
        out = tmp_path / name
        assert cli_main(args + ["--out", str(out), "--workers", workers]) == 0
        outs.append(out)
    files = ["bands.csv", "band_summary.json", "manifest.json"]
    same = all(
        (outs[0] / f).read_bytes() == (o / f).read_bytes()
        for o in outs[1:]
        for f in files
    )
    # rerun from the manifest reproduces everything byte for byte
    replay = tmp_path / "replay"
    assert cli_main(["rerun", "--manifest", str(outs[0] / "manifest.json"),
                     "--out", str(replay)]) == 0
    same_replay = all(
        (outs[0] / f).read_bytes() == (replay / f).read_bytes() for f in files
    )
    report("9 (determinism)", same and same_replay,
           f"identical across reruns and 1 vs 4 workers: {same}; "
           f"manifest replay identical: {same_replay}")
    assert same
    assert same_replay
