"""SAEM-MCMC estimation for the exact model and the three surrogate variants.

One iteration is the classical S / SA / M cycle:

  S step   Metropolis-within-Gibbs refresh of the individual parameters
           (random-walk proposal; N independent chains for the separable
           variants, a strictly sequential sweep for the complete one).
  SA step  stochastic averaging of the sufficient statistics
           s <- s + gamma_k (S(draw) - s).
  M step   closed-form update of (mu, Omega, sigma_eps2).

The step sizes are gamma_k = 1 during burn-in and 1/(k - K0)^a afterwards.
Standard errors come from a stochastic approximation of the observed
information (Louis' identity) along post-convergence MCMC draws.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.spatial.distance import cdist

from .errors import DivergenceError, DomainError, NumericalHealthError, SaemGpError
from .likelihood import (
    Complete,
    Dataset,
    Exact,
    Intermediate,
    PopulationParams,
    Simple,
    _cond_loglik_batch,
    cond_loglik_complete,
    prior_loglik,
)

OMEGA_FLOOR = 1e-10
TARGET_ACCEPT = 0.375  # middle of the 30-45% band
ADAPT_RATE = 0.5


@dataclass(frozen=True)
class SaemConfig:
    k_iters: int = 100
    m_mcmc: int = 15
    burn_in: int = 50
    sa_exponent: float = 1.0
    proposal_scale: np.ndarray | None = None
    seed: int = 0
    fisher_iters: int = 200

    def __post_init__(self):
        if self.k_iters <= self.burn_in:
            raise DomainError("k_iters must exceed burn_in")
        if self.m_mcmc < 1:
            raise DomainError("m_mcmc must be >= 1")
        if not (0.5 < self.sa_exponent <= 1.0):
            raise DomainError("sa_exponent must lie in (0.5, 1]")

    def gamma(self, k: int) -> float:
        if k <= self.burn_in:
            return 1.0
        return float(k - self.burn_in) ** (-self.sa_exponent)


@dataclass
class SufficientStats:
    s1: np.ndarray
    s2: np.ndarray
    s3: float

    @classmethod
    def zeros(cls, d: int) -> "SufficientStats":
        return cls(s1=np.zeros(d), s2=np.zeros((d, d)), s3=0.0)

    def blended(self, fresh: "SufficientStats", gamma: float) -> "SufficientStats":
        return SufficientStats(
            s1=self.s1 + gamma * (fresh.s1 - self.s1),
            s2=self.s2 + gamma * (fresh.s2 - self.s2),
            s3=self.s3 + gamma * (fresh.s3 - self.s3),
        )


@dataclass
class SaemState:
    theta: PopulationParams
    psi: np.ndarray
    stats: SufficientStats
    k: int


@dataclass
class FitReport:
    theta_hat: PopulationParams
    variant: str
    trajectories: np.ndarray  # (k_iters, p)
    param_names: list
    diagnostics: dict
    fisher: np.ndarray | None = None
    std_errors: np.ndarray | None = None


# --- parameter vector layout -----------------------------------------------


def tril_pairs(d: int):
    return [(a, b) for a in range(d) for b in range(a + 1)]


def param_names(d: int):
    names = [f"mu_{k + 1}" for k in range(d)]
    names += [f"omega_{a + 1}{b + 1}" for a, b in tril_pairs(d)]
    names.append("sigma2")
    return names


def theta_to_vector(theta: PopulationParams) -> np.ndarray:
    omega_part = [theta.omega[a, b] for a, b in tril_pairs(theta.dim)]
    return np.concatenate([theta.mu, omega_part, [theta.sigma_eps2]])


# --- closed-form updates ----------------------------------------------------


def m_step(stats: SufficientStats, n_individuals: int, n_tot: int):
    """Exact M step; returns (theta, degenerate_omega_flag)."""
    if stats.s3 < 0:
        raise SaemGpError(f"negative residual statistic s3={stats.s3}")
    mu = stats.s1 / n_individuals
    omega = stats.s2 / n_individuals - np.outer(stats.s1, stats.s1) / n_individuals**2
    omega = (omega + omega.T) / 2.0
    flagged = False
    vals, vecs = np.linalg.eigh(omega)
    if vals.min() < OMEGA_FLOOR:
        vals = np.maximum(vals, OMEGA_FLOOR)
        omega = (vecs * vals) @ vecs.T
        omega = (omega + omega.T) / 2.0
        flagged = True
    sigma2 = max(stats.s3 / n_tot, OMEGA_FLOOR)
    return PopulationParams(mu=mu, omega=omega, sigma_eps2=sigma2), flagged


# --- residual posteriors ----------------------------------------------------


@dataclass(frozen=True)
class ResidualPosterior:
    mean: np.ndarray
    cov_trace: float
    cov: np.ndarray | None = None


def residual_posterior_intermediate(yi, psi_i, theta: PopulationParams, bank, ti=None) -> ResidualPosterior:
    """Two-precision posterior of the diagonal surrogate residual.

    Per coordinate: gamma_j = sig2 Lam_j / (sig2 + Lam_j), m_j = Lam_j e_j /
    (sig2 + Lam_j); both vanish with Lam_j, both saturate as Lam_j -> inf.
    """
    variant = Intermediate(bank)
    ti = bank.times if ti is None else np.asarray(ti, float)
    mean_d = variant.mean(ti, psi_i)[0]
    lam = variant.var(ti, psi_i)[0]
    e = np.asarray(yi, float) - mean_d
    denom = theta.sigma_eps2 + lam
    gamma_diag = theta.sigma_eps2 * lam / denom
    m = lam * e / denom
    return ResidualPosterior(mean=m, cov_trace=float(gamma_diag.sum()))


def _residual_posterior_block(cov_block: np.ndarray, resid: np.ndarray, sigma2: float):
    """Posterior moments of r for one covariance block.

    Uses the singularity-free form Gamma = sig2 C (C + sig2 I)^-1 and
    m = C (C + sig2 I)^-1 e, valid even for C = 0.
    """
    n = cov_block.shape[0]
    total = cov_block + sigma2 * np.eye(n)
    sol = np.linalg.solve(total, np.column_stack([resid, cov_block]))
    m = cov_block @ sol[:, 0]
    gamma = sigma2 * sol[:, 1:]
    return m, (gamma + gamma.T) / 2.0


def residual_posterior_complete(dataset: Dataset, psi_all, theta: PopulationParams, bank) -> ResidualPosterior:
    """Joint posterior of the surrogate residual process over all observations."""
    from .likelihood import assemble_complete_cov

    variant = Complete(bank)
    psi_all = np.atleast_2d(psi_all)
    t_list = [t for t, _ in dataset.individuals]
    resid = np.concatenate(
        [np.asarray(y, float) - variant.mean(t, psi)[0]
         for (t, y), psi in zip(dataset.individuals, psi_all)]
    )
    cov = assemble_complete_cov(bank, t_list, psi_all)
    m, gamma = _residual_posterior_block(cov, resid, theta.sigma_eps2)
    return ResidualPosterior(mean=m, cov_trace=float(np.trace(gamma)), cov=gamma)


# --- single MH transitions (library surface; the runner has batched paths) --


def _variant_of(variant):
    if not isinstance(variant, (Exact, Simple, Intermediate, Complete)):
        raise DomainError(f"unknown model variant: {variant!r}")
    return variant


def _meta_box(variant):
    """Emulation domain for surrogate variants, None for the exact model.

    The surrogate is only trustworthy inside its design box, so the MCMC
    target is truncated there; candidates outside auto-reject.
    """
    return None if isinstance(variant, Exact) else variant.bank.design.box


def mh_step_individual(variant, i: int, psi_current, dataset: Dataset, theta: PopulationParams,
                       proposal_scale, rng) -> tuple:
    """One symmetric random-walk MH transition for individual i.

    Target: p(psi_i | y_i; theta) for the separable variants, truncated to
    the emulation domain for the surrogate ones.  Non-finite candidate
    densities auto-reject.
    """
    variant = _variant_of(variant)
    if isinstance(variant, Complete):
        raise DomainError("use mh_step_complete for the complete variant")
    psi_i = np.asarray(psi_current, float)
    times, y = dataset.individuals[i]
    scale = np.broadcast_to(np.asarray(proposal_scale, float), psi_i.shape)
    cand = psi_i + scale * rng.standard_normal(psi_i.shape)
    box = _meta_box(variant)
    if box is not None and not box.contains(cand):
        return psi_i, False
    cur_ll = float(_cond_loglik_batch(variant, y, times, psi_i[None, :], theta)[0]
                   + prior_loglik(psi_i[None, :], theta)[0])
    cand_ll = float(_cond_loglik_batch(variant, y, times, cand[None, :], theta)[0]
                    + prior_loglik(cand[None, :], theta)[0])
    if not np.isfinite(cand_ll):
        return psi_i, False
    if np.log(rng.uniform()) < cand_ll - cur_ll:
        return cand, True
    return psi_i, False


def mh_step_complete(i: int, psi_all, dataset: Dataset, theta: PopulationParams, bank,
                     proposal_scale, rng) -> tuple:
    """One MH transition for individual i with the joint (non-separable) target."""
    psi_all = np.array(psi_all, float)
    t_list = [t for t, _ in dataset.individuals]
    y_list = [y for _, y in dataset.individuals]
    scale = np.broadcast_to(np.asarray(proposal_scale, float), psi_all[i].shape)
    cand = psi_all[i] + scale * rng.standard_normal(psi_all[i].shape)
    if not bank.design.box.contains(cand):
        return psi_all[i], False
    psi_cand = psi_all.copy()
    psi_cand[i] = cand

    def total(psi_mat, psi_i):
        try:
            joint = cond_loglik_complete(y_list, t_list, psi_mat, theta, bank)
        except NumericalHealthError:
            return -np.inf
        return joint + float(prior_loglik(psi_i[None, :], theta)[0])

    cur = total(psi_all, psi_all[i])
    new = total(psi_cand, cand)
    if not np.isfinite(new):
        return psi_all[i], False
    if np.log(rng.uniform()) < new - cur:
        return cand, True
    return psi_all[i], False


# --- sufficient statistics --------------------------------------------------


def _fresh_stats(variant, dataset: Dataset, psi: np.ndarray, theta_prev: PopulationParams) -> SufficientStats:
    s1 = psi.sum(axis=0)
    s2 = psi.T @ psi
    variant = _variant_of(variant)
    if isinstance(variant, Complete):
        post = residual_posterior_complete(dataset, psi, theta_prev, variant.bank)
        resid = np.concatenate(
            [np.asarray(y, float) - variant.mean(t, p)[0]
             for (t, y), p in zip(dataset.individuals, psi)]
        )
        s3 = float(np.sum((resid - post.mean) ** 2)) + post.cov_trace
        return SufficientStats(s1=s1, s2=s2, s3=s3)
    s3 = 0.0
    for i, (times, y) in enumerate(dataset.individuals):
        mean = variant.mean(times, psi[i])[0]
        resid = np.asarray(y, float) - mean
        if isinstance(variant, Intermediate):
            post = residual_posterior_intermediate(y, psi[i], theta_prev, variant.bank, ti=times)
            s3 += float(np.sum((resid - post.mean) ** 2)) + post.cov_trace
        else:
            s3 += float(np.sum(resid**2))
    return SufficientStats(s1=s1, s2=s2, s3=s3)


def sa_update(stats: SufficientStats, psi_new: np.ndarray, dataset: Dataset,
              theta_prev: PopulationParams, variant, gamma_k: float) -> SufficientStats:
    """SA blend s <- s + gamma (S(draw) - s), with the variant's s3 formula."""
    if not (0.0 <= gamma_k <= 1.0):
        raise DomainError("gamma_k must lie in [0, 1]")
    return stats.blended(_fresh_stats(variant, dataset, psi_new, theta_prev), gamma_k)


# --- SAEM runner ------------------------------------------------------------


class _SeparableSweep:
    """Vectorized across-individuals MH sweeps for Exact/Simple/Intermediate.

    Requires a common time grid; falls back to a per-individual loop
    otherwise.
    """

    def __init__(self, variant, dataset: Dataset):
        self.variant = variant
        self.dataset = dataset
        self.box = _meta_box(variant)
        self.out_of_domain = 0
        self.n_candidates = 0
        self.common = dataset.common_times()
        if self.common is not None:
            self.y = dataset.y_matrix()

    def data_loglik(self, psi: np.ndarray) -> np.ndarray:
        if self.common is not None:
            resid = self.y - self.variant.mean(self.common, psi)
            if isinstance(self.variant, Intermediate):
                var = np.maximum(
                    self.theta.sigma_eps2 + self.variant.var(self.common, psi), 1e-300
                )
                return -0.5 * np.sum(np.log(2 * np.pi * var) + resid**2 / var, axis=1)
            s2 = self.theta.sigma_eps2
            n = self.y.shape[1]
            return -0.5 * (n * np.log(2 * np.pi * s2) + np.sum(resid**2, axis=1) / s2)
        return np.array(
            [float(_cond_loglik_batch(self.variant, y, t, psi[i][None, :], self.theta)[0])
             for i, (t, y) in enumerate(self.dataset.individuals)]
        )

    def run(self, psi, theta, scales, m, rng):
        self.theta = theta
        n, d = psi.shape
        cur = self.data_loglik(psi) + prior_loglik(psi, theta)
        accepted = 0
        for _ in range(m):
            cand = psi + scales * rng.standard_normal((n, d))
            cand_ll = self.data_loglik(cand) + prior_loglik(cand, theta)
            if self.box is not None:
                inside = np.all((cand >= self.box.lower) & (cand <= self.box.upper), axis=1)
                cand_ll = np.where(inside, cand_ll, -np.inf)
                self.out_of_domain += int(n - inside.sum())
            logu = np.log(rng.uniform(size=n))
            ok = np.isfinite(cand_ll) & (logu < cand_ll - cur)
            psi[ok] = cand[ok]
            cur[ok] = cand_ll[ok]
            accepted += int(ok.sum())
        self.n_candidates += m * n
        return psi, accepted / (m * n)


class _CompleteSweep:
    """Sequential-over-individuals MH sweeps for the complete variant.

    With a common time grid the joint covariance is block-diagonal by time,
    so the data log-density decomposes into per-time N x N Gaussian blocks.
    """

    def __init__(self, variant: Complete, dataset: Dataset):
        self.bank = variant.bank
        self.variant = variant
        self.dataset = dataset
        self.common = dataset.common_times()
        if self.common is None:
            raise DomainError("complete variant runner requires a common time grid")
        self.tsel = self.bank.time_indices(self.common)
        self.box = self.bank.design.box
        self.out_of_domain = 0
        self.n_candidates = 0
        self.y = dataset.y_matrix()

    def _blocks(self, psi: np.ndarray):
        """Per-time surrogate covariance blocks, (T, N, N)."""
        d2 = cdist(psi, self.bank.design.points, "sqeuclidean")
        pd2 = cdist(psi, psi, "sqeuclidean")
        blocks = np.empty((self.tsel.size, psi.shape[0], psi.shape[0]))
        for j, t_idx in enumerate(self.tsel):
            em = self.bank.emulators[t_idx]
            k = np.exp(-em.params.phi * d2)
            prior = np.exp(-em.params.phi * pd2)
            block = em.params.sigma2 * (prior - k @ em.corr_inv @ k.T)
            blocks[j] = (block + block.T) / 2.0
        return blocks

    def data_loglik(self, psi: np.ndarray, theta) -> float:
        resid = self.y - self.variant.mean(self.common, psi)  # (N, T)
        blocks = self._blocks(psi)
        total = 0.0
        n = psi.shape[0]
        for j in range(blocks.shape[0]):
            cov = blocks[j] + theta.sigma_eps2 * np.eye(n)
            try:
                factor = cho_factor(cov, lower=True)
            except LinAlgError:
                return -np.inf
            logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
            quad = float(resid[:, j] @ cho_solve(factor, resid[:, j]))
            total += -0.5 * (n * np.log(2 * np.pi) + logdet + quad)
        return total

    def run(self, psi, theta, scales, m, rng):
        n, d = psi.shape
        cur_data = self.data_loglik(psi, theta)
        cur_prior = prior_loglik(psi, theta)
        accepted = 0
        self.n_candidates += m * n
        for i in range(n):
            for _ in range(m):
                cand = psi[i] + scales * rng.standard_normal(d)
                if not self.box.contains(cand):
                    self.out_of_domain += 1
                    continue
                psi_cand = psi.copy()
                psi_cand[i] = cand
                cand_data = self.data_loglik(psi_cand, theta)
                cand_prior = float(prior_loglik(cand[None, :], theta)[0])
                delta = cand_data + cand_prior - cur_data - cur_prior[i]
                if np.isfinite(delta) and np.log(rng.uniform()) < delta:
                    psi[i] = cand
                    cur_data = cand_data
                    cur_prior[i] = cand_prior
                    accepted += 1
        return psi, accepted / (m * n)

    def residual_posterior(self, psi, theta):
        resid = self.y - self.variant.mean(self.common, psi)
        blocks = self._blocks(psi)
        mean = np.empty_like(resid)
        trace = 0.0
        for j in range(blocks.shape[0]):
            m, gamma = _residual_posterior_block(blocks[j], resid[:, j], theta.sigma_eps2)
            mean[:, j] = m
            trace += float(np.trace(gamma))
        return mean, trace


def _make_sweeper(variant, dataset):
    variant = _variant_of(variant)
    if isinstance(variant, Complete):
        return _CompleteSweep(variant, dataset)
    return _SeparableSweep(variant, dataset)


def _fast_stats(variant, sweeper, dataset, psi, theta_prev) -> SufficientStats:
    """Same statistics as _fresh_stats, using the sweeper's batched paths."""
    s1 = psi.sum(axis=0)
    s2 = psi.T @ psi
    if isinstance(sweeper, _CompleteSweep):
        resid = sweeper.y - sweeper.variant.mean(sweeper.common, psi)
        post_mean, trace = sweeper.residual_posterior(psi, theta_prev)
        s3 = float(np.sum((resid - post_mean) ** 2)) + trace
        return SufficientStats(s1=s1, s2=s2, s3=s3)
    if sweeper.common is not None:
        resid = sweeper.y - variant.mean(sweeper.common, psi)
        if isinstance(variant, Intermediate):
            lam = variant.var(sweeper.common, psi)
            denom = theta_prev.sigma_eps2 + lam
            post_mean = lam * resid / denom
            trace = float(np.sum(theta_prev.sigma_eps2 * lam / denom))
            s3 = float(np.sum((resid - post_mean) ** 2)) + trace
        else:
            s3 = float(np.sum(resid**2))
        return SufficientStats(s1=s1, s2=s2, s3=s3)
    return _fresh_stats(variant, dataset, psi, theta_prev)


def variant_tag(variant) -> str:
    return type(_variant_of(variant)).__name__.lower()


def run_saem(variant, dataset: Dataset, config: SaemConfig, theta_init: PopulationParams) -> FitReport:
    """Full SAEM run; deterministic given config.seed."""
    variant = _variant_of(variant)
    d = theta_init.dim
    n = dataset.n_individuals
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    theta = theta_init
    psi = np.tile(theta_init.mu, (n, 1))
    stats = SufficientStats.zeros(d)
    if config.proposal_scale is not None:
        scales = np.asarray(config.proposal_scale, float) * np.ones(d)
    else:
        scales = np.sqrt(np.diag(theta_init.omega))
    sweeper = _make_sweeper(variant, dataset)
    trajectories = np.empty((config.k_iters, d + len(tril_pairs(d)) + 1))
    accept_rates = []
    omega_floored = False
    t0 = time.perf_counter()
    for k in range(1, config.k_iters + 1):
        theta_prev = theta
        psi, rate = sweeper.run(psi, theta, scales, config.m_mcmc, rng)
        accept_rates.append(rate)
        if k <= config.burn_in:
            # Robbins-Monro scale tuning toward the target band; frozen after
            # burn-in so the SA phase keeps a fixed Markov kernel
            scales = scales * np.exp(ADAPT_RATE * (rate - TARGET_ACCEPT))
        stats = stats.blended(_fast_stats(variant, sweeper, dataset, psi, theta_prev), config.gamma(k))
        theta, floored = m_step(stats, n, dataset.n_tot)
        omega_floored = omega_floored or floored
        vec = theta_to_vector(theta)
        if not np.all(np.isfinite(vec)):
            raise DivergenceError(f"non-finite parameter at iteration {k}", iteration=k)
        trajectories[k - 1] = vec
    wall = time.perf_counter() - t0
    diagnostics = {
        "acceptance_rates": accept_rates,
        "mean_acceptance": float(np.mean(accept_rates)),
        "wall_time_s": wall,
        "proposal_scale": scales.tolist(),
        "omega_floored": omega_floored,
        "out_of_domain_rate": (sweeper.out_of_domain / sweeper.n_candidates
                               if sweeper.n_candidates else 0.0),
        "psi_final": psi.tolist(),
    }
    return FitReport(
        theta_hat=theta,
        variant=variant_tag(variant),
        trajectories=trajectories,
        param_names=param_names(d),
        diagnostics=diagnostics,
    )


# --- Fisher information (Louis identity, stochastic approximation) ----------


def _sym_basis(d: int, a: int, b: int) -> np.ndarray:
    e = np.zeros((d, d))
    e[a, b] = 1.0
    e[b, a] = 1.0
    return e


def _prior_grad_hess(psi: np.ndarray, theta: PopulationParams):
    """Gradient/Hessian of sum_i log N(psi_i; mu, Omega) in (mu, tril Omega)."""
    d = theta.dim
    pairs = tril_pairs(d)
    p = d + len(pairs)
    prec = np.linalg.inv(theta.omega)
    diff = psi - theta.mu
    u = diff.sum(axis=0)
    s_mat = diff.T @ diff
    n = psi.shape[0]
    grad = np.zeros(p)
    grad[:d] = prec @ u
    m_mat = 0.5 * (prec @ s_mat @ prec - n * prec)
    for idx, (a, b) in enumerate(pairs):
        grad[d + idx] = 2.0 * m_mat[a, b] if a != b else m_mat[a, a]
    hess = np.zeros((p, p))
    hess[:d, :d] = -n * prec
    basis = [_sym_basis(d, a, b) for a, b in pairs]
    pep = [prec @ e @ prec for e in basis]
    for idx in range(len(pairs)):
        cross = -pep[idx] @ u
        hess[:d, d + idx] = cross
        hess[d + idx, :d] = cross
    sp = s_mat @ prec
    ps = prec @ s_mat
    for j, a_j in enumerate(pep):
        dm = 0.5 * (-a_j @ sp - ps @ a_j + n * a_j)
        for i2, e_i in enumerate(basis):
            hess[d + i2, d + j] = float(np.sum(e_i * dm))
    return grad, hess


def _data_grad_hess_sigma2(variant, dataset: Dataset, psi: np.ndarray, theta: PopulationParams):
    """d/dsigma2 and d2/dsigma2^2 of the complete-data observation term."""
    variant = _variant_of(variant)
    if isinstance(variant, Complete):
        raise DomainError("Fisher information is not supported for the complete variant")
    s2 = theta.sigma_eps2
    if isinstance(variant, Intermediate):
        g = 0.0
        h = 0.0
        for i, (times, y) in enumerate(dataset.individuals):
            v = s2 + variant.var(times, psi[i])[0]
            r2 = (np.asarray(y, float) - variant.mean(times, psi[i])[0]) ** 2
            g += float(np.sum(-0.5 / v + 0.5 * r2 / v**2))
            h += float(np.sum(0.5 / v**2 - r2 / v**3))
        return g, h
    rss = 0.0
    for i, (times, y) in enumerate(dataset.individuals):
        resid = np.asarray(y, float) - variant.mean(times, psi[i])[0]
        rss += float(np.sum(resid**2))
    n_tot = dataset.n_tot
    g = -n_tot / (2 * s2) + rss / (2 * s2**2)
    h = n_tot / (2 * s2**2) - rss / s2**3
    return g, h


def fisher_information(variant, dataset: Dataset, fit: FitReport, config: SaemConfig):
    """Observed-information estimate at theta_hat via Louis' identity.

    Along post-convergence MCMC draws, accumulates the complete-data gradient
    Delta, its outer product G and its Hessian H; the information is
    -H - G + Delta Delta'.  Returns (information, std_errors) and records a
    pseudo-inverse flag in fit.diagnostics when inversion fails.
    """
    variant = _variant_of(variant)
    if isinstance(variant, Complete):
        raise DomainError("Fisher information is not supported for the complete variant")
    theta = fit.theta_hat
    d = theta.dim
    p = d + len(tril_pairs(d)) + 1
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0xF15)))
    psi = np.asarray(fit.diagnostics.get("psi_final"), float)
    scales = np.asarray(fit.diagnostics.get("proposal_scale"), float)
    sweeper = _make_sweeper(variant, dataset)
    delta = np.zeros(p)
    g_acc = np.zeros((p, p))
    h_acc = np.zeros((p, p))
    for j in range(1, config.fisher_iters + 1):
        psi, _ = sweeper.run(psi, theta, scales, config.m_mcmc, rng)
        grad = np.zeros(p)
        hess = np.zeros((p, p))
        grad[:-1], hess[:-1, :-1] = _prior_grad_hess(psi, theta)
        grad[-1], hess[-1, -1] = _data_grad_hess_sigma2(variant, dataset, psi, theta)
        gamma = 1.0 / j
        delta += gamma * (grad - delta)
        g_acc += gamma * (np.outer(grad, grad) - g_acc)
        h_acc += gamma * (hess - h_acc)
    info = -h_acc - g_acc + np.outer(delta, delta)
    info = (info + info.T) / 2.0
    try:
        cov = np.linalg.inv(info)
        fit.diagnostics["fisher_pseudo_inverse"] = False
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)
        fit.diagnostics["fisher_pseudo_inverse"] = True
    diag = np.diag(cov)
    std = np.where(diag > 0, np.sqrt(np.abs(diag)), np.nan)
    fit.diagnostics["negative_se_variances"] = int(np.sum(diag <= 0))
    fit.fisher = info
    fit.std_errors = std
    return info, std


# --- report serialization ---------------------------------------------------


def report_to_json(fit: FitReport) -> dict:
    diagnostics = {k: v for k, v in fit.diagnostics.items() if k != "psi_final"}
    return {
        "variant": fit.variant,
        "param_names": fit.param_names,
        "estimates": theta_to_vector(fit.theta_hat).tolist(),
        "mu": fit.theta_hat.mu.tolist(),
        "omega": fit.theta_hat.omega.tolist(),
        "sigma_eps2": fit.theta_hat.sigma_eps2,
        "fisher": None if fit.fisher is None else fit.fisher.tolist(),
        "std_errors": None if fit.std_errors is None else fit.std_errors.tolist(),
        "trajectories": fit.trajectories.tolist(),
        "diagnostics": diagnostics,
    }


def save_report(fit: FitReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report_to_json(fit), fh, indent=1)


def trajectories_to_csv(fit: FitReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter"] + fit.param_names)
        for k, row in enumerate(fit.trajectories, start=1):
            writer.writerow([k] + [repr(float(v)) for v in row])
