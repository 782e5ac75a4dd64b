"""Conditional log-densities for the exact model and its three surrogate
approximations, plus a Gauss-Hermite marginal-likelihood oracle for tiny
instances.

Variant objects carry what each conditional density needs:

  Exact         the true regression function (PK scenario or a callable)
  Simple        surrogate mean only, homoscedastic noise
  Intermediate  surrogate mean + diagonal surrogate variance
  Complete      surrogate mean + full surrogate covariance across all
                individuals (joint density, not separable)

The per-time emulation makes cross-time surrogate covariance structurally
zero, so the complete covariance is block-diagonal once observations are
grouped by time.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.spatial.distance import cdist

from .emulator import EmulatorBank
from .errors import DomainError, NumericalHealthError
from .models import PkScenario, eval_f

VAR_FLOOR = 1e-300
LOG2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PopulationParams:
    """Estimation target theta = (mu, Omega, sigma_eps2)."""

    mu: np.ndarray
    omega: np.ndarray
    sigma_eps2: float

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        omega = np.atleast_2d(np.asarray(self.omega, dtype=float))
        if omega.shape != (mu.size, mu.size):
            raise DomainError("omega must be d x d with d = len(mu)")
        if not np.allclose(omega, omega.T):
            raise DomainError("omega must be symmetric")
        try:
            np.linalg.cholesky(omega)
        except np.linalg.LinAlgError as exc:
            raise DomainError("omega must be positive definite") from exc
        if self.sigma_eps2 <= 0:
            raise DomainError("sigma_eps2 must be positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "omega", omega)

    @property
    def dim(self) -> int:
        return self.mu.size


@dataclass(frozen=True)
class Dataset:
    """Per-individual observation vectors with their time grids."""

    individuals: tuple  # of (times, y) array pairs

    def __post_init__(self):
        cleaned = []
        for times, y in self.individuals:
            times = np.asarray(times, dtype=float)
            y = np.asarray(y, dtype=float)
            if times.size < 1 or times.shape != y.shape:
                raise DomainError("each individual needs matching non-empty times and y")
            if times.size > 1 and not np.all(np.diff(times) > 0):
                raise DomainError("times must be strictly increasing per individual")
            cleaned.append((times, y))
        object.__setattr__(self, "individuals", tuple(cleaned))

    @property
    def n_individuals(self) -> int:
        return len(self.individuals)

    @property
    def n_tot(self) -> int:
        return sum(t.size for t, _ in self.individuals)

    def common_times(self):
        """Shared time grid when all individuals use one, else None."""
        first = self.individuals[0][0]
        for times, _ in self.individuals[1:]:
            if times.shape != first.shape or not np.array_equal(times, first):
                return None
        return first

    def y_matrix(self) -> np.ndarray:
        """(N, n) observation matrix; requires a common time grid."""
        if self.common_times() is None:
            raise DomainError("dataset has no common time grid")
        return np.stack([y for _, y in self.individuals])


def dataset_to_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "time", "y"])
        for i, (times, y) in enumerate(dataset.individuals, start=1):
            for t, v in zip(times, y):
                writer.writerow([i, repr(float(t)), repr(float(v))])


def dataset_from_csv(path) -> Dataset:
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "time", "y"]:
            raise DomainError(f"unexpected dataset header: {reader.fieldnames}")
        for row in reader:
            rows.setdefault(row["id"], []).append((float(row["time"]), float(row["y"])))
    individuals = []
    for key in rows:
        pairs = sorted(rows[key])
        individuals.append((np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])))
    return Dataset(individuals=tuple(individuals))


# --- model variants ---------------------------------------------------------


@dataclass(frozen=True)
class Exact:
    """True regression function: PK scenario or callable (times, psi) -> values."""

    scenario: object
    step: float = 0.01

    def mean(self, times, psi_batch) -> np.ndarray:
        """(B, n) regression values."""
        psi_batch = np.atleast_2d(psi_batch)
        if isinstance(self.scenario, PkScenario):
            return eval_f(self.scenario, psi_batch, step=self.step, times=times)
        return np.asarray(self.scenario(times, psi_batch), dtype=float)


@dataclass(frozen=True)
class Simple:
    bank: EmulatorBank

    def mean(self, times, psi_batch) -> np.ndarray:
        idx = self.bank.time_indices(times)
        return self.bank.predict_mean(np.atleast_2d(psi_batch), time_idx=idx)


@dataclass(frozen=True)
class Intermediate:
    bank: EmulatorBank

    def mean(self, times, psi_batch) -> np.ndarray:
        idx = self.bank.time_indices(times)
        return self.bank.predict_mean(np.atleast_2d(psi_batch), time_idx=idx)

    def var(self, times, psi_batch) -> np.ndarray:
        idx = self.bank.time_indices(times)
        return self.bank.predict_var(np.atleast_2d(psi_batch), time_idx=idx)


@dataclass(frozen=True)
class Complete:
    bank: EmulatorBank

    def mean(self, times, psi_batch) -> np.ndarray:
        idx = self.bank.time_indices(times)
        return self.bank.predict_mean(np.atleast_2d(psi_batch), time_idx=idx)


def _gauss_iid_loglik(resid: np.ndarray, sigma2: float, axis=None) -> np.ndarray:
    sigma2 = max(sigma2, VAR_FLOOR)
    n = resid.shape[-1] if axis is not None else resid.size
    return -0.5 * (n * (LOG2PI + math.log(sigma2)) + np.sum(resid**2, axis=axis) / sigma2)


def cond_loglik_exact(yi, ti, psi_i, theta: PopulationParams, scenario, step: float = 0.01) -> float:
    """log N(y_i; f(t_i, psi_i), sigma_eps2 I)."""
    variant = scenario if isinstance(scenario, Exact) else Exact(scenario, step=step)
    mean = variant.mean(np.asarray(ti, float), psi_i)[0]
    return float(_gauss_iid_loglik(np.asarray(yi, float) - mean, theta.sigma_eps2))


def cond_loglik_simple(yi, ti, psi_i, theta: PopulationParams, bank: EmulatorBank) -> float:
    """Same Gaussian form as the exact model with the surrogate mean."""
    mean = Simple(bank).mean(np.asarray(ti, float), psi_i)[0]
    return float(_gauss_iid_loglik(np.asarray(yi, float) - mean, theta.sigma_eps2))


def cond_loglik_intermediate(yi, ti, psi_i, theta: PopulationParams, bank: EmulatorBank) -> float:
    """Diagonal heteroscedastic Gaussian: variances sigma_eps2 + C_D(t_j, psi)."""
    variant = Intermediate(bank)
    ti = np.asarray(ti, float)
    mean = variant.mean(ti, psi_i)[0]
    var = theta.sigma_eps2 + variant.var(ti, psi_i)[0]
    var = np.maximum(var, VAR_FLOOR)
    resid = np.asarray(yi, float) - mean
    return float(-0.5 * np.sum(LOG2PI + np.log(var) + resid**2 / var))


def assemble_complete_cov(bank: EmulatorBank, t_list, psi_matrix) -> np.ndarray:
    """Full n_tot x n_tot surrogate covariance across all observations.

    Observations are ordered individual-major.  Entries pairing different
    times are zero (each time owns an independent emulator); entries sharing
    a time use that time's emulator across individuals.
    """
    psi_matrix = np.atleast_2d(psi_matrix)
    offsets = np.cumsum([0] + [len(t) for t in t_list])
    n_tot = offsets[-1]
    cov = np.zeros((n_tot, n_tot))
    idx_lists = [bank.time_indices(np.asarray(t, float)) for t in t_list]
    d2 = cdist(psi_matrix, bank.design.points, "sqeuclidean")
    for t_idx in range(bank.n_times):
        rows = []  # (flat observation index, individual index)
        for i, idx in enumerate(idx_lists):
            for j, tj in enumerate(idx):
                if tj == t_idx:
                    rows.append((offsets[i] + j, i))
        if not rows:
            continue
        flat = np.array([r[0] for r in rows])
        inds = np.array([r[1] for r in rows])
        em = bank.emulators[t_idx]
        k = np.exp(-em.params.phi * d2[inds])  # (m, n_D)
        prior = np.exp(-em.params.phi * cdist(psi_matrix[inds], psi_matrix[inds], "sqeuclidean"))
        block = em.params.sigma2 * (prior - k @ em.corr_inv @ k.T)
        cov[np.ix_(flat, flat)] += block
    cov = (cov + cov.T) / 2.0
    return cov


def cond_loglik_complete(y_list, t_list, psi_matrix, theta: PopulationParams, bank: EmulatorBank) -> float:
    """Joint log-density of all observations given all psi (full covariance)."""
    variant = Complete(bank)
    resid = np.concatenate(
        [np.asarray(y, float) - variant.mean(np.asarray(t, float), psi)[0]
         for y, t, psi in zip(y_list, t_list, np.atleast_2d(psi_matrix))]
    )
    cov = assemble_complete_cov(bank, t_list, psi_matrix)
    cov[np.diag_indices_from(cov)] += theta.sigma_eps2
    try:
        factor = cho_factor(cov, lower=True)
    except LinAlgError as exc:
        raise NumericalHealthError("complete covariance factorization failed") from exc
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    quad = float(resid @ cho_solve(factor, resid))
    return -0.5 * (resid.size * LOG2PI + logdet + quad)


def prior_loglik(psi_batch, theta: PopulationParams) -> np.ndarray:
    """log N(psi; mu, Omega) per row."""
    psi_batch = np.atleast_2d(psi_batch)
    chol = np.linalg.cholesky(theta.omega)
    diff = psi_batch - theta.mu
    sol = np.linalg.solve(chol, diff.T)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (theta.dim * LOG2PI + logdet + np.sum(sol**2, axis=0))


def _cond_loglik_batch(variant, yi, ti, psi_batch, theta: PopulationParams) -> np.ndarray:
    """Per-individual conditional data log-density for a batch of psi values."""
    resid = np.asarray(yi, float)[None, :] - variant.mean(ti, psi_batch)
    if isinstance(variant, Intermediate):
        var = np.maximum(theta.sigma_eps2 + variant.var(ti, psi_batch), VAR_FLOOR)
        return -0.5 * np.sum(LOG2PI + np.log(var) + resid**2 / var, axis=1)
    return _gauss_iid_loglik(resid, theta.sigma_eps2, axis=1)


def marginal_loglik_quadrature(dataset: Dataset, theta: PopulationParams, variant, nodes: int = 41) -> float:
    """Sum over individuals of log int p(y_i|psi) N(psi; mu, Omega) dpsi.

    Tensor Gauss-Hermite adapted to the population law; only d <= 2 is
    supported and the Complete variant is excluded (non-separable).
    """
    if isinstance(variant, Complete):
        raise DomainError("quadrature oracle does not support the complete variant")
    if theta.dim > 2:
        raise DomainError("quadrature oracle supports d <= 2 only")
    if nodes < 5:
        raise DomainError("need at least 5 quadrature nodes")
    x, w = hermegauss(nodes)  # nodes/weights for the weight exp(-x^2/2)
    chol = np.linalg.cholesky(theta.omega)
    if theta.dim == 1:
        units = x[:, None]
        weights = w / math.sqrt(2.0 * math.pi)
    else:
        xa, xb = np.meshgrid(x, x, indexing="ij")
        units = np.stack([xa.ravel(), xb.ravel()], axis=1)
        wa, wb = np.meshgrid(w, w, indexing="ij")
        weights = (wa * wb).ravel() / (2.0 * math.pi)
    psi_nodes = theta.mu + units @ chol.T
    log_weights = np.log(weights)
    total = 0.0
    for times, y in dataset.individuals:
        loglik = _cond_loglik_batch(variant, y, times, psi_nodes, theta)
        total += float(_logsumexp(log_weights + loglik))
    return total


def _logsumexp(v: np.ndarray) -> float:
    m = np.max(v)
    if not np.isfinite(m):
        return m
    return m + math.log(np.sum(np.exp(v - m)))
