"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s``.  The estimator criteria
(3-7) share three desk-scale study conditions executed once each by
module-scoped fixtures; expect several hours of wall time at the default 30
replications on a small machine.  ``ORDSS_ACCEPT_REPLICATES`` scales the
replicate count down for smoke runs (the stated tolerances widen per the
10-replicate smoke variant) and ``ORDSS_THREADS`` sets worker count.
Fixed seeds make every result reproducible.
"""

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from ordss.errors import InfeasibleDynamicsError
from ordss.filtering import kalman_filter, particle_filter
from ordss.inference import SliceConfig, slice_se, slice_se_from_evaluations, wald_ci
from ordss.measurement import LinearGaussianMeasurement
from ordss.mif2 import (
    LinearParameterSpace,
    LinearParams,
    Mif2Config,
    cooling_factor,
    fit,
)
from ordss.model_core import DynamicsSpec, solve_identification, stationary_covariance
from ordss.simulate import simulate_states
from ordss.study import (
    DESK_MIF2,
    StudyCondition,
    default_threads,
    run_study,
)

REPLICATIONS = int(os.environ.get("ORDSS_ACCEPT_REPLICATES", "30"))
THREADS = default_threads()
# spec tolerances: +-0.10 at the full 30 replications, +-0.15 for the
# 10-replicate smoke variant
AR_BIAS_TOL = 0.10 if REPLICATIONS >= 30 else 0.15


def report(num, name, ok, detail):
    print(f"\nACCEPTANCE {num} ({name}): {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num} ({name}): {detail}"


def random_feasible_dynamics(rng, p):
    while True:
        A = rng.normal(0.0, 0.4, (p, p))
        r = np.max(np.abs(np.linalg.eigvals(A)))
        if r > 0:
            A *= rng.uniform(0.15, 0.9) / r
        try:
            return DynamicsSpec.from_transition(A)
        except InfeasibleDynamicsError:
            continue


def variance_se(dyn, T, max_lag=300):
    """MC standard error of the empirical variance of each state over T steps."""
    acov = np.broadcast_to(np.diag(dyn.gamma), (max_lag, dyn.p)).copy()
    M = np.eye(dyn.p)
    for lag in range(1, max_lag):
        M = dyn.A @ M
        acov[lag] = np.diag(M @ dyn.gamma)
    s = acov[0] ** 2 + 2.0 * np.sum(acov[1:] ** 2, axis=0)
    return np.sqrt(2.0 * s / T)


class TestCriterion1Identification:
    def test_identification_solver(self):
        t_start = time.perf_counter()
        rng = np.random.default_rng(20250801)
        T = 100_000
        worst_resid = 0.0
        worst_diag = 0.0
        worst_var_z = 0.0
        for i in range(200):
            p = int(rng.integers(2, 5))
            dyn = random_feasible_dynamics(rng, p)
            resid = dyn.gamma - dyn.A @ dyn.gamma @ dyn.A.T - np.diag(dyn.sigma_diag)
            worst_resid = max(worst_resid, float(np.max(np.abs(resid))))
            gamma2 = stationary_covariance(dyn.A, np.diag(dyn.sigma_diag))
            worst_diag = max(worst_diag, float(np.max(np.abs(np.diag(gamma2) - 1.0))))
            states = simulate_states(dyn, T, np.random.default_rng(rng.integers(2 ** 63)))
            z = np.abs(states.var(axis=0) - 1.0) / variance_se(dyn, T)
            worst_var_z = max(worst_var_z, float(z.max()))
        elapsed = time.perf_counter() - t_start
        ok = worst_resid < 1e-8 and worst_diag < 1e-8 and worst_var_z < 3.0 \
            and elapsed < 60.0
        report(1, "identification solver", ok,
               f"200 matrices: max fixed-point residual {worst_resid:.2e}, "
               f"max unit-diagonal error {worst_diag:.2e}, max variance "
               f"z-score {worst_var_z:.2f} (<3), runtime {elapsed:.1f}s (<60)")


def linear_model_fixture(seed, T=200, q=4, rho=0.7, psi=0.5):
    rng = np.random.default_rng(seed)
    dyn = random_feasible_dynamics(rng, 2)
    while np.max(np.abs(np.linalg.eigvals(dyn.A))) > rho:
        dyn = random_feasible_dynamics(rng, 2)
    C = np.zeros((q, 2))
    C[np.arange(q), rng.integers(0, 2, q)] = rng.uniform(0.8, 1.2, q)
    meas = LinearGaussianMeasurement(C=C, psi_diag=np.full(q, psi))
    x = np.linalg.cholesky(dyn.gamma) @ rng.standard_normal(2)
    data = np.empty((T, q))
    for t in range(T):
        x = dyn.A @ x + np.sqrt(dyn.sigma_diag) * rng.standard_normal(2)
        data[t] = C @ x + np.sqrt(meas.psi_diag) * rng.standard_normal(q)
    return dyn, meas, data


class TestCriterion2FilterVsOracle:
    def test_filter_vs_kalman(self):
        t_start = time.perf_counter()
        worst_z = 0.0
        for seed in range(20):
            dyn, meas, data = linear_model_fixture(500 + seed)
            exact = kalman_filter(dyn, meas, data).log_likelihood
            lls = np.array([
                particle_filter(dyn, meas, data, 4000,
                                np.random.default_rng((seed, r))).log_likelihood
                for r in range(6)])
            z = abs(lls.mean() - exact) / lls.std(ddof=1)
            worst_z = max(worst_z, float(z))
        # Jensen-gap shrinkage on one strongly-informative dataset
        dyn, meas, data = linear_model_fixture(9001, psi=0.15)
        exact = kalman_filter(dyn, meas, data).log_likelihood
        gaps = {}
        variances = {}
        for K in (250, 500, 1000, 4000):
            lls = np.array([
                particle_filter(dyn, meas, data, K,
                                np.random.default_rng((77, K, r))).log_likelihood
                for r in range(50)])
            gaps[K] = abs(exact - lls.mean())
            variances[K] = lls.var(ddof=1)
        monotone_gap = gaps[500] > gaps[1000] > gaps[4000]
        monotone_var = variances[250] > variances[1000] > variances[4000]
        elapsed = time.perf_counter() - t_start
        ok = worst_z < 3.0 and monotone_gap and monotone_var and elapsed < 300.0
        report(2, "filter vs oracle", ok,
               f"20 models: max |meanPF-KF|/SD {worst_z:.2f} (<3); gap "
               f"{gaps[500]:.3f}>{gaps[1000]:.3f}>{gaps[4000]:.3f}; var "
               f"{variances[250]:.3f}>{variances[1000]:.3f}>"
               f"{variances[4000]:.3f}; runtime {elapsed:.0f}s (<300)")


def run_condition(cond, base_seed):
    rows, summary = run_study([cond], replications=REPLICATIONS,
                              base_seed=base_seed, threads=THREADS,
                              mif2_config=DESK_MIF2,
                              slice_config=SliceConfig())
    return rows, summary


@pytest.fixture(scope="module")
def cond_a_results():
    # criterion 3/4/7 cell: 500 tp, AR .7 / CR .25, equal, 6 items, 7 cats
    cond = StudyCondition(timepoints=500, items_per_state=6, categories=7,
                          ar=0.7, cr=0.25, threshold_mode="equal")
    return run_condition(cond, base_seed=411)


@pytest.fixture(scope="module")
def cond_b_results():
    # criterion 5 cell: 500 tp, AR .3 / CR 0, equal, 3 items, 3 cats
    cond = StudyCondition(timepoints=500, items_per_state=3, categories=3,
                          ar=0.3, cr=0.0, threshold_mode="equal")
    return run_condition(cond, base_seed=412)


@pytest.fixture(scope="module")
def cond_c_results():
    # criterion 6 cell: 500 tp, AR .7 / CR .25, equal, 3 items, 3 cats
    cond = StudyCondition(timepoints=500, items_per_state=3, categories=3,
                          ar=0.7, cr=0.25, threshold_mode="equal")
    return run_condition(cond, base_seed=413)


def model_rows(rows, model):
    return [r for r in rows if r["model"] == model and not r["failed"]]


def pooled_ar_bias(rows):
    return [r["ar_rel_bias_1"] for r in rows] + [r["ar_rel_bias_2"] for r in rows]


class TestCriterion3GrUnbiasedness:
    def test_gr_estimator_unbiasedness(self, cond_a_results):
        rows, _ = cond_a_results
        grm = model_rows(rows, "grm")
        ar_median = float(np.median(pooled_ar_bias(grm)))
        cr_median = float(np.median([r["cr_bias"] for r in grm]))
        smoke = [r for r in grm if r["replicate"] < 10]
        smoke_median = float(np.median(pooled_ar_bias(smoke)))
        smoke_seconds = sum(r["fit_seconds"] for r in smoke)
        ok = (abs(ar_median) < AR_BIAS_TOL and abs(cr_median) < 0.05
              and abs(smoke_median) < 0.15 and smoke_seconds < 3600.0)
        report(3, "GR estimator unbiasedness", ok,
               f"{len(grm)} replicates: GRM median AR rel bias "
               f"{ar_median:+.3f} (|.|<{AR_BIAS_TOL}), median CR bias "
               f"{cr_median:+.3f} (|.|<0.05); 10-replicate smoke median "
               f"{smoke_median:+.3f} (|.|<0.15) in {smoke_seconds:.0f}s "
               f"of fit time (<3600)")


class TestCriterion4StateRecovery:
    def test_state_recovery(self, cond_a_results):
        rows, _ = cond_a_results
        grm = float(np.median([r["state_recovery"]
                               for r in model_rows(rows, "grm")]))
        lin = float(np.median([r["state_recovery"]
                               for r in model_rows(rows, "linear")]))
        ok = abs(grm - 0.849) < 0.05 and abs(lin - 0.79) < 0.07
        report(4, "state recovery", ok,
               f"GRM median rho_s {grm:.3f} (target 0.849 +- 0.05), "
               f"Linear median rho_s {lin:.3f} (target 0.79 +- 0.07)")


class TestCriterion5LinearBiasDirection:
    def test_linear_approximation_bias(self, cond_b_results):
        rows, _ = cond_b_results
        grm = model_rows(rows, "grm")
        lin = model_rows(rows, "linear")
        lin_ar = float(np.median(pooled_ar_bias(lin)))
        lin_cr = float(np.median([r["cr_bias"] for r in lin]))
        grm_ar = float(np.median(pooled_ar_bias(grm)))
        grm_cr = float(np.median([r["cr_bias"] for r in grm]))
        # directional invariants of the study design
        grm_smaller = abs(grm_ar) < abs(lin_ar)
        ok = (lin_ar > 0.5 and lin_cr > 0.2 and abs(grm_ar) < 0.15
              and abs(grm_cr) < 0.05 and grm_smaller)
        report(5, "linear approximation bias direction", ok,
               f"Linear median AR rel bias {lin_ar:+.3f} (>0.5), median CR "
               f"bias {lin_cr:+.3f} (>0.2); GRM {grm_ar:+.3f} (|.|<0.15), "
               f"{grm_cr:+.3f} (|.|<0.05)")


class TestCriterion6SliceSes:
    def test_exact_quadratic_recovery(self):
        grid = np.linspace(0.5, 1.5, 21)
        lls = -((grid - 1.0) ** 2) / (2 * 0.04)
        se, _, flag = slice_se_from_evaluations(1.0, grid, lls)
        ok = flag == "" and abs(se - 0.2) < 1e-10
        report("6a", "slice SE exact quadratic", ok,
               f"recovered SE {se:.12f} (0.2 +- 1e-10)")

    def test_kalman_numeric_hessian(self):
        from tests.test_inference import kalman_loglik_of, make_linear_fit

        space, shell, data = make_linear_fit(seed=1, T=500)
        cfg = SliceConfig(n_points=21, half_width=0.05, replicates=1,
                          use_kalman=True, param_names=("a_1_1", "a_1_2", "a_2_2"))
        result = slice_se(shell, space, data, cfg)
        h = 1e-4
        worst = 0.0
        for name in cfg.param_names:
            center = {"a_1_1": 0.5, "a_1_2": 0.2, "a_2_2": 0.5}[name]
            def ll(v):
                return kalman_loglik_of(space, shell.averaged, data, name, v)
            hess = (ll(center + h) - 2 * ll(center) + ll(center - h)) / h ** 2
            se_ref = 1.0 / math.sqrt(-hess)
            worst = max(worst, abs(result.se[name] / se_ref - 1.0))
        ok = worst < 0.05
        report("6b", "slice SE vs numeric Hessian", ok,
               f"max relative deviation {worst:.3%} (<5%)")

    def test_grm_slice_se_magnitude(self, cond_c_results):
        rows, _ = cond_c_results
        grm = model_rows(rows, "grm")
        ses = [r["ar_se_1"] for r in grm] + [r["ar_se_2"] for r in grm]
        ses = [s for s in ses if np.isfinite(s)]
        med = float(np.median(ses))
        ok = abs(med - 0.05) < 0.02
        report("6c", "GRM AR slice SE magnitude", ok,
               f"median AR slice SE {med:.4f} (target 0.05 +- 0.02, "
               f"{len(ses)} values)")


def _liberality_replicate(seed):
    """One desk-scale linear-Gaussian replicate: fit + AR slice coverage."""
    from ordss.errors import EstimationFailureError

    rng = np.random.default_rng((99, seed))
    A = np.array([[0.5, 0.2], [0.0, 0.5]])
    dyn = DynamicsSpec.from_transition(A)
    q = 6
    space = LinearParameterSpace(np.repeat(np.arange(2), 3))
    truth = LinearParams(A=A, loadings=np.array([1.0, 0.9, 1.1, 1.0, 0.95, 1.05]),
                         psi_diag=np.full(q, 0.5))
    _, meas = space.build_models(truth)
    T = 300
    x = np.linalg.cholesky(dyn.gamma) @ rng.standard_normal(2)
    data = np.empty((T, q))
    for t in range(T):
        x = A @ x + np.sqrt(dyn.sigma_diag) * rng.standard_normal(2)
        data[t] = meas.C @ x + np.sqrt(meas.psi_diag) * rng.standard_normal(q)
    cfg = Mif2Config(n_particles=400, n_iterations=100, n_runs=2,
                     seed=int(rng.integers(2 ** 63)))
    try:
        result = fit(space, data, cfg)
        scfg = SliceConfig(n_points=11, half_width=0.3, replicates=2,
                           n_particles=400, seed=int(rng.integers(2 ** 63)),
                           param_names=("a_1_1", "a_2_2"))
        ses = slice_se(result, space, data, scfg)
    except EstimationFailureError:
        return []
    out = []
    for name, idx in (("a_1_1", (0, 0)), ("a_2_2", (1, 1))):
        se = ses.se[name]
        if np.isfinite(se) and se > 0:
            lo, hi = wald_ci(result.averaged.A[idx], se, 0.95)
            out.append(bool(lo <= 0.5 <= hi))
    return out


class TestCriterion7Coverage:
    def test_grm_coverage_band(self, cond_a_results):
        rows, summary = cond_a_results
        grm_summary = next(s for s in summary if s["model"] == "grm")
        cov95 = grm_summary["ar_coverage_95"]
        cov998 = grm_summary["ar_coverage_998"]
        ok = 0.60 <= cov95 <= 0.90 and cov998 > cov95
        report("7a", "GRM 95% coverage band", ok,
               f"AR coverage 95%: {cov95:.3f} (in [0.60, 0.90]); "
               f"99.8%: {cov998:.3f} (strictly higher)")

    def test_998_exceeds_95_everywhere(self, cond_a_results, cond_b_results,
                                       cond_c_results):
        details = []
        ok = True
        for tag, (rows, summary) in (("A", cond_a_results), ("B", cond_b_results),
                                     ("C", cond_c_results)):
            s = next(x for x in summary if x["model"] == "grm")
            ok = ok and s["ar_coverage_998"] > s["ar_coverage_95"]
            details.append(f"{tag}: {s['ar_coverage_95']:.2f}->"
                           f"{s['ar_coverage_998']:.2f}")
        report("7b", "99.8% > 95% coverage per condition", ok, "; ".join(details))

    def test_linear_testbed_liberality(self):
        # slice SEs are liberal: 95% Wald coverage of the AR entries on a
        # correctly-specified linear-Gaussian testbed lands below nominal
        n = 200
        with ProcessPoolExecutor(max_workers=THREADS) as pool:
            results = list(pool.map(_liberality_replicate, range(n)))
        flat = [c for chunk in results for c in chunk]
        coverage = float(np.mean(flat))
        ok = 0.60 <= coverage <= 0.90
        report("7c", "slice SE liberality", ok,
               f"95% coverage over {len(flat)} AR estimates from {n} "
               f"replicates: {coverage:.3f} (in [0.60, 0.90])")


class TestCriterion8Cooling:
    def test_cooling_schedule(self):
        v0 = cooling_factor(0, 0.05)
        v50 = cooling_factor(50, 0.05)
        v100 = cooling_factor(100, 0.05)
        ok = v0 == 1.0 and v50 == 0.05 and abs(v100 / 0.0025 - 1.0) < 1e-14
        report(8, "cooling schedule", ok,
               f"multipliers at (0, 50, 100): ({v0}, {v50}, {v100}) = "
               f"(1, 0.05, 0.0025)")


class TestCriterion9Determinism:
    def test_cli_determinism_across_threads(self, tmp_path):
        from ordss.cli import main

        def run(argv):
            return main([str(a) for a in argv])

        files = {}
        for tag in ("x", "y"):
            d = tmp_path / tag
            d.mkdir()
            data = d / "data.csv"
            assert run(["simulate", "--timepoints", 60, "--items", 3,
                        "--categories", 3, "--ar", 0.3, "--cr", 0.25,
                        "--thresholds", "equal", "--seed", 11,
                        "--out", data, "--states-out", d / "states.csv"]) == 0
            fit_json = d / "fit.json"
            assert run(["fit", "--model", "grm", "--data", data,
                        "--particles", 60, "--iterations", 4, "--runs", 2,
                        "--seed", 5, "--out", fit_json]) == 0
            cfg = d / "study.json"
            cfg.write_text(json.dumps({
                "conditions": [{"timepoints": 100, "items_per_state": 3,
                                "categories": 3, "ar": 0.3, "cr": 0.0}],
                "replications": 2, "base_seed": 3,
                "mif2": {"particles": 50, "iterations": 4, "runs": 2},
                "slice": {"points": 5, "replicates": 1, "particles": 50},
            }))
            threads = 1 if tag == "x" else 2
            assert run(["study", "--config", cfg, "--out", d / "study",
                        "--threads", threads]) == 0
            files[tag] = {
                "data": data.read_bytes(),
                "states": (d / "states.csv").read_bytes(),
                "fit": fit_json.read_bytes(),
                "replicates": (d / "study" / "replicates.csv").read_bytes(),
                "summary": (d / "study" / "summary.csv").read_bytes(),
            }
        mismatches = [k for k in files["x"] if files["x"][k] != files["y"][k]]
        ok = not mismatches
        report(9, "determinism", ok,
               "simulate/fit/study outputs byte-identical across reruns and "
               f"thread counts (mismatches: {mismatches or 'none'})")
