"""Acceptance suite: nine checks covering the estimator end to end.

Each test prints one `[criterion N] ... PASS/FAIL` line (visible with -s or
on failure) and asserts the same condition.
"""

import math
import time

import numpy as np
import pytest
from scipy.spatial.distance import cdist, pdist

from saemgp.bench import StudyConfig, VariantSpec, prefit_banks, run_study, simulate_dataset
from saemgp.design import Box, Design, lhs_design
from saemgp.emulator import RegressorSpec, fit_bank, fit_emulator
from saemgp.likelihood import (
    Dataset,
    Exact,
    Intermediate,
    PopulationParams,
    Simple,
    marginal_loglik_quadrature,
)
from saemgp.models import eval_f, first_order_scenario, michaelis_menten_scenario
from saemgp.saem import (
    SaemConfig,
    SufficientStats,
    fisher_information,
    m_step,
    mh_step_individual,
    run_saem,
)

FO_TRUTH_MU = np.array([-2.52, 0.4, -3.22])
FO_TRUTH = PopulationParams(mu=FO_TRUTH_MU, omega=0.01 * np.eye(3), sigma_eps2=0.01)
FO_INIT = PopulationParams(mu=[-3.0, 1.0, -3.0], omega=0.1 * np.eye(3), sigma_eps2=0.09)

MM_TRUTH = PopulationParams(mu=[2.5, 1.0, -0.994], omega=0.09 * np.eye(3), sigma_eps2=0.01)
MM_INIT = PopulationParams(mu=[2.0, 0.5, -0.5], omega=0.1 * np.eye(3), sigma_eps2=0.09)
MM_BOX = Box([1.6, 0.0, -1.6], [3.3, 2.1, -0.3])


def _report(num: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {num}] {name}: {status}" + (f" ({detail})" if detail else ""))
    assert ok, f"criterion {num} {name}: {detail}"


def test_criterion_1_gp_oracle_equivalence():
    """predict_mean / predict_cov match brute-force Gaussian conditioning."""
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(20):
        d = int(rng.integers(1, 4))
        n_d = int(rng.integers(d + 2, 11))
        while True:
            pts = rng.uniform(size=(n_d, d))
            if pdist(pts).min() > 0.05:
                break
        design = Design(points=pts, box=Box(np.zeros(d), np.ones(d)), seed=0)
        z = rng.standard_normal(n_d)
        # keep the closest pair's correlation in [e^-3, 0.9] so the oracle's
        # linear solves are well conditioned at the 1e-10 comparison scale
        min_d2 = float(pdist(pts, "sqeuclidean").min())
        phi = float(rng.uniform(0.105, 3.0)) / min_d2
        em = fit_emulator(design, z, phi_bounds=(phi, phi))
        x = rng.uniform(size=(2, d))
        all_pts = np.vstack([design.points, x])
        corr = np.exp(-phi * cdist(all_pts, all_pts, "sqeuclidean"))
        joint = em.params.sigma2 * corr
        joint[:n_d, :n_d] += em.params.nugget * em.params.sigma2 * np.eye(n_d)
        h_all = em.regressors.evaluate(all_pts)
        prior_mean = h_all @ em.params.beta
        k_xd = joint[n_d:, :n_d]
        k_dd = joint[:n_d, :n_d]
        cond_mean = prior_mean[n_d:] + k_xd @ np.linalg.solve(k_dd, z - prior_mean[:n_d])
        cond_cov = joint[n_d:, n_d:] - k_xd @ np.linalg.solve(k_dd, k_xd.T)
        worst = max(
            worst,
            abs(em.predict_mean(x[0]) - cond_mean[0]),
            abs(em.predict_mean(x[1]) - cond_mean[1]),
            abs(em.predict_cov(x[0]) - cond_cov[0, 0]),
            abs(em.predict_cov(x[0], x[1]) - cond_cov[0, 1]),
        )
    elapsed = time.perf_counter() - t0
    _report(1, "GP oracle equivalence", worst < 1e-10 and elapsed < 10.0,
            f"worst abs error {worst:.2e}, {elapsed:.1f}s")


def test_criterion_2_interpolation():
    """Fitted emulators reproduce their design evaluations at nugget 1e-10."""
    rng = np.random.default_rng(7)
    cases = []
    for n_d in (5, 8):
        pts = np.linspace(0.0, math.pi, n_d)[:, None]
        cases.append((Design(points=pts, box=Box([0.0], [math.pi]), seed=0),
                      np.sin(pts[:, 0])))
    pts = np.linspace(0.05, 0.95, 5)[:, None]
    cases.append((Design(points=pts, box=Box([0.0], [1.0]), seed=0),
                  np.exp(pts[:, 0])))
    design2 = lhs_design(Box([0.0, 0.0], [1.0, 1.0]), 10, seed=4)
    cases.append((design2, np.cos(design2.points @ np.array([2.0, -1.0]))))
    scenario = first_order_scenario()
    design3 = lhs_design(Box(FO_TRUTH_MU - 1.0, FO_TRUTH_MU + 1.0), 20, seed=5)
    cases.append((design3, eval_f(scenario, design3.points)[:, 3]))
    worst = 0.0
    for design, z in cases:
        em = fit_emulator(design, z, nugget=1e-10, phi_bounds=(2.0, 50.0))
        pred = em.predict_mean(design.points)
        rel = np.abs(pred - z) / max(1.0, float(np.abs(z).max()))
        worst = max(worst, float(rel.max()))
    _report(2, "interpolation at design points", worst < 1e-8,
            f"worst relative error {worst:.2e}")


def test_criterion_3_marginal_gap_shrinkage():
    """|Exact-Simple| and |Intermediate-Simple| marginal gaps shrink with n_D."""
    t0 = time.perf_counter()
    times = np.array([0.5, 1.0, 2.0])

    def f(t, p):
        return np.atleast_2d(p)[:, [0]] * np.exp(-np.asarray(t))[None, :]

    theta = PopulationParams(mu=[1.0], omega=[[0.09]], sigma_eps2=0.01)
    rng = np.random.default_rng(5)
    individuals = []
    for _ in range(8):
        psi = rng.normal(1.0, 0.3)
        y = f(times, np.array([psi]))[0] + rng.normal(0.0, 0.1, size=times.size)
        individuals.append((times, y))
    ds = Dataset(individuals=tuple(individuals))
    exact_val = marginal_loglik_quadrature(ds, theta, Exact(f), nodes=41)
    pts12 = np.linspace(0.05, 1.95, 12)
    box = Box([0.0], [2.0])
    gaps_es, gaps_is = [], []
    for sl in (slice(None, None, 4), slice(None, None, 2), slice(None)):
        pts = pts12[sl][:, None]
        design = Design(points=pts, box=box, seed=0)
        bank = fit_bank(design, times, f(times, pts).T,
                        regressors=RegressorSpec("constant"), nugget=1e-8)
        simple_val = marginal_loglik_quadrature(ds, theta, Simple(bank), nodes=41)
        inter_val = marginal_loglik_quadrature(ds, theta, Intermediate(bank), nodes=41)
        gaps_es.append(abs(exact_val - simple_val))
        gaps_is.append(abs(inter_val - simple_val))
    elapsed = time.perf_counter() - t0
    ok = (
        gaps_es[0] >= gaps_es[1] >= gaps_es[2]
        and gaps_is[0] >= gaps_is[1] >= gaps_is[2]
        and gaps_es[2] <= 0.5 * gaps_es[0]
        and gaps_is[2] <= 0.5 * gaps_is[0]
        and elapsed < 60.0
    )
    _report(3, "marginal-likelihood gap shrinkage", ok,
            f"exact-simple {gaps_es}, intermediate-simple {gaps_is}, {elapsed:.1f}s")


def test_criterion_4_first_order_reproduction():
    """Simple / Intermediate at n_D=100: mu bias < 2%, coverage in [85, 100]."""
    t0 = time.perf_counter()
    scenario = first_order_scenario()
    lower = np.minimum(FO_TRUTH_MU, np.asarray(FO_INIT.mu)) - 1.0
    upper = np.maximum(FO_TRUTH_MU, np.asarray(FO_INIT.mu)) + 1.0
    config = StudyConfig(
        scenario=scenario, truth=FO_TRUTH, box=Box(lower, upper),
        n_individuals=36, replications=50,
        variants=(VariantSpec("simple", 100), VariantSpec("intermediate", 100)),
        saem=SaemConfig(seed=0), seed=42, theta_init=FO_INIT,
    )
    result = run_study(config)
    elapsed = time.perf_counter() - t0
    ok = elapsed < 1800.0
    details = []
    for label in ("simple:100", "intermediate:100"):
        bias = result.bias_pct[label][:3]
        cov = result.coverage_pct[label][:3]
        ok = ok and np.all(np.abs(bias) < 2.0) and np.all((cov >= 85.0) & (cov <= 100.0))
        details.append(f"{label} bias% {np.round(bias, 3).tolist()} "
                       f"coverage% {np.round(cov, 1).tolist()}")
    _report(4, "first-order desk-scale reproduction", ok,
            "; ".join(details) + f", {elapsed:.0f}s")


def test_criterion_5_michaelis_menten_trend():
    """Simple-variant mu_log_ka bias magnitude drops from n_D=25 to n_D=100."""
    t0 = time.perf_counter()
    config = StudyConfig(
        scenario=michaelis_menten_scenario(), truth=MM_TRUTH, box=MM_BOX,
        n_individuals=36, replications=50,
        variants=(VariantSpec("simple", 25), VariantSpec("simple", 100)),
        saem=SaemConfig(seed=0), seed=7, theta_init=MM_INIT,
    )
    result = run_study(config)
    elapsed = time.perf_counter() - t0
    bias_small = abs(result.bias_pct["simple:25"][1])
    bias_large = abs(result.bias_pct["simple:100"][1])
    _report(5, "Michaelis-Menten design-size trend", bias_large < bias_small,
            f"|bias mu_log_ka| {bias_small:.3f}% -> {bias_large:.3f}%, {elapsed:.0f}s")


def test_criterion_6_m_step_exactness():
    """Closed-form M-step beats random perturbations on every fixture."""
    rng = np.random.default_rng(60)
    t0 = time.perf_counter()

    def complete_loglik(theta, stats, n, n_tot):
        s_mat = (stats.s2 - np.outer(stats.s1, theta.mu)
                 - np.outer(theta.mu, stats.s1) + n * np.outer(theta.mu, theta.mu))
        sign, logdet = np.linalg.slogdet(theta.omega)
        if sign <= 0:
            return -np.inf
        return (-0.5 * n * logdet
                - 0.5 * float(np.trace(np.linalg.solve(theta.omega, s_mat)))
                - 0.5 * n_tot * math.log(theta.sigma_eps2)
                - 0.5 * stats.s3 / theta.sigma_eps2)

    all_ok = True
    for _ in range(100):
        d = int(rng.integers(1, 4))
        n = int(rng.integers(5, 21))
        n_tot = n * int(rng.integers(2, 6))
        psi = rng.standard_normal((n, d)) * rng.uniform(0.5, 2.0) + rng.normal(size=d)
        stats = SufficientStats(s1=psi.sum(axis=0), s2=psi.T @ psi,
                                s3=float(rng.uniform(0.5, 5.0)) * n_tot)
        theta_hat, _ = m_step(stats, n, n_tot)
        best = complete_loglik(theta_hat, stats, n, n_tot)
        for _ in range(1000):
            jitter = rng.normal(0.0, 0.05, size=(d, d))
            omega_p = theta_hat.omega + 0.5 * (jitter + jitter.T)
            if np.linalg.eigvalsh(omega_p).min() <= 0:
                continue
            theta_p = PopulationParams(
                mu=theta_hat.mu + rng.normal(0.0, 0.05, size=d),
                omega=omega_p,
                sigma_eps2=theta_hat.sigma_eps2 * math.exp(rng.normal(0.0, 0.1)),
            )
            if complete_loglik(theta_p, stats, n, n_tot) > best + 1e-12:
                all_ok = False
    elapsed = time.perf_counter() - t0
    _report(6, "M-step exactness", all_ok and elapsed < 10.0, f"{elapsed:.1f}s")


def test_criterion_7_mh_conjugate_posterior():
    """Conjugate d=1 posterior moments recovered to 2% over 1e5 transitions."""

    def identity_f(times, psi_batch):
        psi_batch = np.atleast_2d(psi_batch)
        return np.tile(psi_batch[:, [0]], (1, np.asarray(times).size))

    theta = PopulationParams(mu=[1.0], omega=[[0.09]], sigma_eps2=0.04)
    times = np.array([1.0, 2.0, 3.0])
    y = np.array([1.35, 1.18, 1.42])
    ds = Dataset(individuals=((times, y),))
    prec = 1.0 / 0.09 + 3.0 / 0.04
    post_var = 1.0 / prec
    post_mean = post_var * (1.0 / 0.09 + y.sum() / 0.04)
    rng = np.random.default_rng(17)
    psi = np.array([1.0])
    draws = np.empty(100_000)
    variant = Exact(identity_f)
    for j in range(draws.size):
        psi, _ = mh_step_individual(variant, 0, psi, ds, theta, 0.25, rng)
        draws[j] = psi[0]
    sample = draws[5000:]
    mean_err = abs(sample.mean() - post_mean) / abs(post_mean)
    var_err = abs(sample.var() - post_var) / post_var
    _report(7, "MH conjugate-posterior moments", mean_err < 0.02 and var_err < 0.02,
            f"mean rel err {mean_err:.4f}, var rel err {var_err:.4f}")


def test_criterion_8_timing_ordering():
    """One SAEM run at N=36: Simple < Intermediate < Complete, Simple < Exact."""
    scenario = first_order_scenario()
    dataset = simulate_dataset(FO_TRUTH, scenario, 36, seed=11)
    lower = np.minimum(FO_TRUTH_MU, np.asarray(FO_INIT.mu)) - 1.0
    upper = np.maximum(FO_TRUTH_MU, np.asarray(FO_INIT.mu)) + 1.0
    config = StudyConfig(
        scenario=scenario, truth=FO_TRUTH, box=Box(lower, upper),
        n_individuals=36, replications=1,
        variants=(VariantSpec("simple", 100),), saem=SaemConfig(seed=0), seed=0,
    )
    bank = prefit_banks(config)[100]
    cfg = SaemConfig(seed=1)
    walls = {}
    for name, variant in (
        ("simple", Simple(bank)),
        ("intermediate", Intermediate(bank)),
        ("exact", Exact(scenario)),
    ):
        fit = run_saem(variant, dataset, cfg, FO_INIT)
        walls[name] = fit.diagnostics["wall_time_s"]
    from saemgp.likelihood import Complete

    fit = run_saem(Complete(bank), dataset, cfg, FO_INIT)
    walls["complete"] = fit.diagnostics["wall_time_s"]
    ok = (walls["simple"] < walls["intermediate"] < walls["complete"]
          and walls["simple"] < walls["exact"])
    _report(8, "wall-time ordering", ok,
            ", ".join(f"{k} {v:.2f}s" for k, v in walls.items()))


def test_criterion_9_fisher_sanity():
    """d=1 linear toy: SEs within 10% of the analytic Fisher values at N=200."""

    def identity_f(times, psi_batch):
        psi_batch = np.atleast_2d(psi_batch)
        return np.tile(psi_batch[:, [0]], (1, np.asarray(times).size))

    truth = PopulationParams(mu=[1.0], omega=[[0.09]], sigma_eps2=0.04)
    rng = np.random.default_rng(14)
    times = np.array([1.0, 2.0, 3.0, 4.0])
    individuals = []
    for _ in range(200):
        psi = rng.normal(1.0, 0.3)
        y = psi + rng.normal(0.0, 0.2, size=times.size)
        individuals.append((times, y))
    ds = Dataset(individuals=tuple(individuals))
    cfg = SaemConfig(seed=2)
    fit = run_saem(Exact(identity_f), ds, cfg,
                   PopulationParams(mu=[0.5], omega=[[0.2]], sigma_eps2=0.2))
    _, std = fisher_information(Exact(identity_f), ds, fit, cfg)
    n, n_obs = 200, times.size
    s2 = fit.theta_hat.sigma_eps2
    w2 = fit.theta_hat.omega[0, 0]
    sigma = s2 * np.eye(n_obs) + w2 * np.ones((n_obs, n_obs))
    sigma_inv = np.linalg.inv(sigma)
    info_mu = n * float(np.ones(n_obs) @ sigma_inv @ np.ones(n_obs))
    d_omega = np.ones((n_obs, n_obs))
    d_sigma = np.eye(n_obs)
    var_block = np.array([
        [0.5 * n * np.trace(sigma_inv @ d_omega @ sigma_inv @ d_omega),
         0.5 * n * np.trace(sigma_inv @ d_omega @ sigma_inv @ d_sigma)],
        [0.5 * n * np.trace(sigma_inv @ d_sigma @ sigma_inv @ d_omega),
         0.5 * n * np.trace(sigma_inv @ d_sigma @ sigma_inv @ d_sigma)],
    ])
    cov_var = np.linalg.inv(var_block)
    oracle = np.array([math.sqrt(1.0 / info_mu),
                       math.sqrt(cov_var[0, 0]), math.sqrt(cov_var[1, 1])])
    rel = np.abs(std - oracle) / oracle
    _report(9, "Fisher standard-error sanity", bool(np.all(rel < 0.10)),
            f"relative errors {np.round(rel, 4).tolist()}")
