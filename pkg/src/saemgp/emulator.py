"""Kriging emulation of an expensive function on a fixed design.

The surrogate is the conditional mean of a Gaussian process with a
parametric trend and a Gaussian correlation kernel, conditioned on exact
evaluations at the design points.  The trend coefficients and process
variance are profiled out of the Gaussian likelihood analytically; only
the correlation range is optimized numerically (golden section on the log
scale).  All fitted hyperparameters are then plugged in as known.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.spatial.distance import cdist

from .design import Design, design_from_json, design_to_json
from .errors import DomainError, FitError, NumericalHealthError

KERNEL_GAUSSIAN = "gaussian"
REGRESSORS_CONSTANT = "constant"
REGRESSORS_LINEAR = "linear"

DEFAULT_NUGGET = 1e-10
#: banks are fitted on larger designs where the Gaussian correlation matrix
#: is numerically singular; a larger nugget keeps conditional variances
#: accurate to well within the clamping tolerance
BANK_NUGGET = 1e-6
DEFAULT_PHI_BOUNDS = (1e-3, 1e3)
#: conditional variances within -VAR_CLAMP_REL * sigma2 of zero are clamped;
#: the tolerance widens with the conditioning of the correlation matrix
#: (kappa ~ 1/nugget), since round-off in the quadratic form scales with it
VAR_CLAMP_REL = 1e-8
VAR_CLAMP_COND = 32.0 * np.finfo(float).eps


def _var_clamp_rel(nugget: float) -> float:
    if nugget <= 0:
        return VAR_CLAMP_REL
    return max(VAR_CLAMP_REL, VAR_CLAMP_COND / nugget)
GOLDEN_ITERS = 64


@dataclass(frozen=True)
class KernelSpec:
    family: str = KERNEL_GAUSSIAN
    phi: float = 1.0

    def __post_init__(self):
        if self.family != KERNEL_GAUSSIAN:
            raise DomainError(f"unsupported kernel family: {self.family!r}")
        if self.phi <= 0:
            raise DomainError("phi must be positive")


@dataclass(frozen=True)
class RegressorSpec:
    basis: str = REGRESSORS_CONSTANT

    def __post_init__(self):
        if self.basis not in (REGRESSORS_CONSTANT, REGRESSORS_LINEAR):
            raise DomainError(f"unsupported regressor basis: {self.basis!r}")

    def n_terms(self, dim: int) -> int:
        return 1 if self.basis == REGRESSORS_CONSTANT else dim + 1

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Design matrix H at a batch of points, shape (n, L)."""
        x = np.atleast_2d(x)
        ones = np.ones((x.shape[0], 1))
        if self.basis == REGRESSORS_CONSTANT:
            return ones
        return np.hstack([ones, x])


@dataclass(frozen=True)
class EmulatorParams:
    beta: np.ndarray
    sigma2: float
    phi: float
    nugget: float = DEFAULT_NUGGET

    def __post_init__(self):
        if self.sigma2 < 0:
            raise DomainError("sigma2 must be nonnegative")
        if self.phi <= 0:
            raise DomainError("phi must be positive")
        if self.nugget < 0:
            raise DomainError("nugget must be nonnegative")
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, float)))


def gaussian_kernel(x, x2, phi: float):
    """K(x, x') = exp(-phi ||x - x'||^2); equals 1 iff x == x'."""
    if phi <= 0:
        raise DomainError("phi must be positive")
    diff = np.asarray(x, float) - np.asarray(x2, float)
    return float(np.exp(-phi * np.dot(diff, diff)))


def _corr_matrix(points: np.ndarray, phi: float, nugget: float) -> np.ndarray:
    d2 = cdist(points, points, "sqeuclidean")
    return np.exp(-phi * d2) + nugget * np.eye(points.shape[0])


def gp_profile_loglik(design: Design, z, regressors: RegressorSpec, phi: float, nugget: float = DEFAULT_NUGGET):
    """Profile the trend and variance out of the GP likelihood at fixed phi.

    Returns (loglik, beta_hat, sigma2_hat) with the generalized least squares
    trend and the profiled variance (z - H beta)' Sigma^-1 (z - H beta) / n.
    """
    z = np.asarray(z, dtype=float).ravel()
    n = design.n_points
    h = regressors.evaluate(design.points)
    if n < h.shape[1]:
        raise FitError("need at least as many design points as trend terms")
    sigma = _corr_matrix(design.points, phi, nugget)
    try:
        factor = cho_factor(sigma, lower=True)
    except LinAlgError as exc:
        raise FitError(f"correlation matrix not positive definite at phi={phi}") from exc
    sinv_h = cho_solve(factor, h)
    sinv_z = cho_solve(factor, z)
    gram = h.T @ sinv_h
    try:
        beta = np.linalg.solve(gram, h.T @ sinv_z)
    except np.linalg.LinAlgError as exc:
        raise FitError("rank-deficient trend matrix") from exc
    resid = z - h @ beta
    sigma2 = float(resid @ cho_solve(factor, resid)) / n
    # round-off floor: an interpolating trend leaves residuals of order
    # eps * |z|, whose quadratic form must be treated as exactly zero
    floor = 64.0 * np.finfo(float).eps ** 2 * n * float(np.mean(z * z) + 1.0)
    sigma2 = 0.0 if sigma2 <= floor else sigma2
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    if sigma2 <= 0.0:
        # degenerate (interpolating trend); likelihood unbounded above
        loglik = math.inf
    else:
        loglik = -0.5 * (n * math.log(2 * math.pi * sigma2) + logdet + n)
    return loglik, beta, sigma2


@dataclass(frozen=True)
class Emulator:
    """Fitted Kriging surrogate; immutable and safe for concurrent prediction."""

    design: Design
    z: np.ndarray
    params: EmulatorParams
    regressors: RegressorSpec
    chol: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    corr_inv: np.ndarray = field(repr=False)

    def _kvec(self, x: np.ndarray) -> np.ndarray:
        """Correlation vector(s) between x (batch) and the design, (B, n_D)."""
        d2 = cdist(np.atleast_2d(x), self.design.points, "sqeuclidean")
        return np.exp(-self.params.phi * d2)

    def predict_mean(self, x):
        x2d = np.atleast_2d(np.asarray(x, float))
        h = self.regressors.evaluate(x2d)
        out = h @ self.params.beta + self._kvec(x2d) @ self.weights
        return float(out[0]) if np.asarray(x).ndim == 1 else out

    def predict_cov(self, x, x2=None):
        """Conditional covariance C_D(x, x'); variance when x2 is omitted."""
        x_arr = np.asarray(x, float)
        if x2 is None:
            var = self.predict_var(np.atleast_2d(x_arr))
            return float(var[0]) if x_arr.ndim == 1 else var
        kx = self._kvec(np.atleast_2d(x_arr))[0]
        kx2 = self._kvec(np.atleast_2d(np.asarray(x2, float)))[0]
        prior = gaussian_kernel(x_arr, np.asarray(x2, float), self.params.phi)
        # symmetrized quadratic form so cov(x, x') == cov(x', x) bit for bit
        quad = 0.5 * (kx @ (self.corr_inv @ kx2) + kx2 @ (self.corr_inv @ kx))
        cov = self.params.sigma2 * (prior - quad)
        if np.allclose(x_arr, x2):
            cov = self._clamp_var(cov)
        return float(cov)

    def predict_var(self, x) -> np.ndarray:
        """Batch conditional variances, shape (B,)."""
        k = self._kvec(np.atleast_2d(np.asarray(x, float)))
        raw = self.params.sigma2 * (1.0 - ((k @ self.corr_inv) * k).sum(axis=-1))
        return self._clamp_var(raw)

    def _clamp_var(self, var):
        tol = _var_clamp_rel(self.params.nugget) * max(self.params.sigma2, 1.0)
        low = np.min(var)
        if low < -tol:
            raise NumericalHealthError(f"conditional variance {low:.3e} below -{tol:.3e}")
        return np.maximum(var, 0.0)

    def pointwise_bound(self, x):
        """Design-only error functional 1 - k' Corr^-1 k (variance / sigma2).

        Depends only on the design, the range and the nugget, so it stays
        defined even for a degenerate fit with sigma2 = 0.
        """
        k = self._kvec(np.atleast_2d(np.asarray(x, float)))
        raw = 1.0 - ((k @ self.corr_inv) * k).sum(axis=-1)
        tol = _var_clamp_rel(self.params.nugget)
        low = np.min(raw)
        if low < -tol:
            raise NumericalHealthError(f"pointwise bound {low:.3e} below -{tol:.3e}")
        raw = np.maximum(raw, 0.0)
        return float(raw[0]) if np.asarray(x).ndim == 1 else raw


def predict_mean(em: Emulator, x):
    return em.predict_mean(x)


def predict_cov(em: Emulator, x, x2=None):
    return em.predict_cov(x, x2)


def pointwise_bound(em: Emulator, x):
    return em.pointwise_bound(x)


def _build_emulator(design, z, regressors, phi, nugget, beta, sigma2) -> Emulator:
    sigma = _corr_matrix(design.points, phi, nugget)
    factor = cho_factor(sigma, lower=True)
    h = regressors.evaluate(design.points)
    weights = cho_solve(factor, z - h @ beta)
    corr_inv = cho_solve(factor, np.eye(design.n_points))
    corr_inv = (corr_inv + corr_inv.T) / 2.0
    params = EmulatorParams(beta=beta, sigma2=sigma2, phi=phi, nugget=nugget)
    chol = np.tril(factor[0])
    return Emulator(
        design=design, z=np.asarray(z, float).ravel(), params=params,
        regressors=regressors, chol=chol, weights=weights, corr_inv=corr_inv,
    )


def fit_emulator(
    design: Design,
    z,
    regressors: RegressorSpec = RegressorSpec(),
    kernel_family: str = KERNEL_GAUSSIAN,
    phi_bounds=DEFAULT_PHI_BOUNDS,
    nugget: float = DEFAULT_NUGGET,
) -> Emulator:
    """Fit the range parameter by golden-section search on log(phi).

    The trend and variance are profiled at each candidate phi; the search is
    deterministic, so refits with identical inputs are bit-identical.
    """
    if kernel_family != KERNEL_GAUSSIAN:
        raise DomainError(f"unsupported kernel family: {kernel_family!r}")
    z = np.asarray(z, dtype=float).ravel()
    if not np.all(np.isfinite(z)):
        raise FitError("design evaluations must be finite")
    lo, hi = float(phi_bounds[0]), float(phi_bounds[1])
    if lo <= 0 or hi < lo:
        raise DomainError("phi_bounds must be a positive interval")

    def objective(log_phi):
        try:
            ll, _, _ = gp_profile_loglik(design, z, regressors, math.exp(log_phi), nugget)
        except FitError:
            return -math.inf
        return ll

    if hi == lo:
        phi_hat = lo
    else:
        a, b = math.log(lo), math.log(hi)
        invphi = (math.sqrt(5.0) - 1.0) / 2.0
        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
        fc, fd = objective(c), objective(d)
        for _ in range(GOLDEN_ITERS):
            if fc >= fd:
                b, d, fd = d, c, fc
                c = b - invphi * (b - a)
                fc = objective(c)
            else:
                a, c, fc = c, d, fd
                d = a + invphi * (b - a)
                fd = objective(d)
        phi_hat = math.exp((a + b) / 2.0)
    loglik, beta, sigma2 = gp_profile_loglik(design, z, regressors, phi_hat, nugget)
    if not (np.isfinite(loglik) or loglik == math.inf):
        raise FitError("profile likelihood non-finite across phi bounds")
    return _build_emulator(design, z, regressors, phi_hat, nugget, beta, sigma2)


@dataclass(frozen=True)
class EmulatorBank:
    """One emulator per observation time, sharing a single design over psi."""

    times: np.ndarray
    emulators: tuple

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if len(self.emulators) != times.size:
            raise DomainError("need exactly one emulator per time")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "emulators", tuple(self.emulators))
        ems = self.emulators
        object.__setattr__(self, "_phis", np.array([e.params.phi for e in ems]))
        object.__setattr__(self, "_sig2s", np.array([e.params.sigma2 for e in ems]))
        object.__setattr__(self, "_betas", np.stack([e.params.beta for e in ems]))
        object.__setattr__(self, "_weights", np.stack([e.weights for e in ems]))
        object.__setattr__(self, "_corr_invs", np.stack([e.corr_inv for e in ems]))

    @property
    def design(self) -> Design:
        return self.emulators[0].design

    @property
    def n_times(self) -> int:
        return self.times.size

    def time_indices(self, times) -> np.ndarray:
        """Map observation times onto the bank grid; error when not covered."""
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(self.times, times)
        idx = np.clip(idx, 0, self.n_times - 1)
        # accept the neighbour on either side of the insertion point
        left = np.clip(idx - 1, 0, self.n_times - 1)
        idx = np.where(
            np.abs(self.times[left] - times) < np.abs(self.times[idx] - times), left, idx
        )
        if not np.allclose(self.times[idx], times, rtol=0, atol=1e-9):
            raise DomainError("bank time grid does not cover the requested times")
        return idx

    def _kmat(self, psi_batch: np.ndarray) -> np.ndarray:
        """Correlation tensor exp(-phi_t d2_bn), shape (T, B, n_D)."""
        d2 = cdist(np.atleast_2d(psi_batch), self.design.points, "sqeuclidean")
        return np.exp(-self._phis[:, None, None] * d2[None, :, :])

    def predict_mean(self, psi_batch, time_idx=None) -> np.ndarray:
        """Surrogate means for a batch of psi, shape (B, T) (or selected times)."""
        psi_batch = np.atleast_2d(psi_batch)
        tsel = np.arange(self.n_times) if time_idx is None else np.asarray(time_idx)
        d2 = cdist(psi_batch, self.design.points, "sqeuclidean")
        k = np.exp(-self._phis[tsel][:, None, None] * d2[None, :, :])
        h = self.emulators[0].regressors.evaluate(psi_batch)
        trend = h @ self._betas[tsel].T  # (B, Tsel)
        return trend + np.einsum("tbn,tn->bt", k, self._weights[tsel])

    def predict_var(self, psi_batch, time_idx=None) -> np.ndarray:
        """Conditional variances, shape (B, T); clamped like Emulator.predict_var."""
        psi_batch = np.atleast_2d(psi_batch)
        tsel = np.arange(self.n_times) if time_idx is None else np.asarray(time_idx)
        d2 = cdist(psi_batch, self.design.points, "sqeuclidean")
        k = np.exp(-self._phis[tsel][:, None, None] * d2[None, :, :])
        quad = (np.matmul(k, self._corr_invs[tsel]) * k).sum(axis=-1)
        raw = (self._sig2s[tsel][:, None] * (1.0 - quad)).T
        rel = max(_var_clamp_rel(e.params.nugget) for e in self.emulators)
        tol = rel * max(float(self._sig2s.max()), 1.0)
        if raw.size and raw.min() < -tol:
            raise NumericalHealthError(f"conditional variance {raw.min():.3e} below -{tol:.3e}")
        return np.maximum(raw, 0.0)


def fit_bank(
    design: Design,
    times,
    evaluations,
    regressors: RegressorSpec = RegressorSpec(REGRESSORS_LINEAR),
    phi_bounds=DEFAULT_PHI_BOUNDS,
    nugget: float = BANK_NUGGET,
) -> EmulatorBank:
    """Fit one emulator per time from exact evaluations (n_times, n_D)."""
    times = np.asarray(times, dtype=float)
    evaluations = np.asarray(evaluations, dtype=float)
    if evaluations.shape != (times.size, design.n_points):
        raise DomainError("evaluations must have shape (n_times, n_design_points)")
    emulators = [
        fit_emulator(design, evaluations[j], regressors=regressors,
                     phi_bounds=phi_bounds, nugget=nugget)
        for j in range(times.size)
    ]
    return EmulatorBank(times=times, emulators=tuple(emulators))


def loo_rmse(em: Emulator) -> float:
    """Leave-one-out RMSE at the fitted hyperparameters and trend.

    Virtual cross-validation: each residual equals the prediction error of
    the emulator refitted without that point, holding phi, sigma2 and beta
    at their full-data estimates.
    """
    resid = em.weights / np.diag(em.corr_inv)
    return float(np.sqrt(np.mean(resid**2)))


def emulator_to_json(em: Emulator) -> dict:
    return {
        "design": design_to_json(em.design),
        "z": em.z.tolist(),
        "regressors": em.regressors.basis,
        "params": {
            "beta": em.params.beta.tolist(),
            "sigma2": em.params.sigma2,
            "phi": em.params.phi,
            "nugget": em.params.nugget,
        },
    }


def emulator_from_json(obj: dict) -> Emulator:
    design = design_from_json(obj["design"])
    params = obj["params"]
    return _build_emulator(
        design,
        np.asarray(obj["z"], float),
        RegressorSpec(obj["regressors"]),
        params["phi"],
        params["nugget"],
        np.asarray(params["beta"], float),
        params["sigma2"],
    )


def bank_to_json(bank: EmulatorBank) -> dict:
    return {
        "times": bank.times.tolist(),
        "emulators": [emulator_to_json(e) for e in bank.emulators],
    }


def bank_from_json(obj: dict) -> EmulatorBank:
    return EmulatorBank(
        times=np.asarray(obj["times"], float),
        emulators=tuple(emulator_from_json(e) for e in obj["emulators"]),
    )


def save_bank(bank: EmulatorBank, path) -> None:
    with open(path, "w") as fh:
        json.dump(bank_to_json(bank), fh, indent=1)


def load_bank(path) -> EmulatorBank:
    with open(path) as fh:
        return bank_from_json(json.load(fh))


def prediction_audit(em: Emulator, points, path) -> None:
    """CSV of mean / variance / error bound at the given points."""
    points = np.atleast_2d(np.asarray(points, float))
    means = em.predict_mean(points)
    variances = em.predict_var(points)
    bounds = em.pointwise_bound(points)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{k + 1}" for k in range(points.shape[1])] + ["mean", "var", "bound"])
        for row, m, v, b in zip(points, means, variances, bounds):
            writer.writerow([repr(float(val)) for val in row]
                            + [repr(float(m)), repr(float(v)), repr(float(b))])
