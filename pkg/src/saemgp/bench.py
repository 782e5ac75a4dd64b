"""Replicated simulation studies: simulate, fit, and tabulate bias / RMSE /
coverage per population parameter (parameter rows, variant x design-size
columns).
"""

from __future__ import annotations

import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .design import Box, lhs_design
from .emulator import BANK_NUGGET, RegressorSpec, REGRESSORS_LINEAR, fit_bank
from .errors import DomainError, SaemGpError, SolverError
from .likelihood import Complete, Dataset, Exact, Intermediate, PopulationParams, Simple
from .models import PkScenario, eval_f
from .saem import (
    FitReport,
    SaemConfig,
    fisher_information,
    param_names,
    run_saem,
    theta_to_vector,
)

Z_95 = 1.959963984540054
MAX_REDRAWS = 100


@dataclass(frozen=True)
class VariantSpec:
    """Which estimator to run; meta variants carry a design size."""

    name: str  # exact | simple | intermediate | complete
    n_design: int | None = None

    def __post_init__(self):
        if self.name not in ("exact", "simple", "intermediate", "complete"):
            raise DomainError(f"unknown variant name: {self.name!r}")
        if self.name != "exact" and self.n_design is None:
            raise DomainError(f"variant {self.name!r} needs n_design")

    @property
    def label(self) -> str:
        return self.name if self.name == "exact" else f"{self.name}:{self.n_design}"


@dataclass(frozen=True)
class StudyConfig:
    scenario: PkScenario
    truth: PopulationParams
    box: Box
    n_individuals: int
    replications: int
    variants: tuple
    saem: SaemConfig
    seed: int
    solver_step: float = 0.01
    design_seed: int = 101
    nugget: float = BANK_NUGGET
    phi_bounds: tuple = (1e-3, 1e3)
    theta_init: PopulationParams | None = None

    def __post_init__(self):
        if self.replications < 1:
            raise DomainError("replications must be >= 1")


@dataclass
class StudyResult:
    parameters: list  # parameter names
    truth_values: np.ndarray
    records: dict  # variant label -> list of (estimates, std_errors) per rep
    bias_pct: dict  # variant label -> per-parameter %
    rmse_pct: dict
    coverage_pct: dict
    wall_time_s: dict
    n_failed: dict
    extrapolation_rate: dict = field(default_factory=dict)


def simulate_dataset(truth: PopulationParams, scenario: PkScenario, n_individuals: int,
                     seed: int, step: float = 0.01, return_psi: bool = False):
    """Draw psi_i ~ N(mu, Omega), run the exact solver, add homoscedastic noise.

    Individuals whose draw breaks the solver are redrawn (with a cap); the
    redraw count is not part of the dataset.  With `return_psi` the drawn
    individual parameters are returned alongside the dataset.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    sigma = np.sqrt(truth.sigma_eps2)
    individuals = []
    psis = []
    for _ in range(n_individuals):
        for attempt in range(MAX_REDRAWS):
            psi = rng.multivariate_normal(truth.mu, truth.omega)
            try:
                f_vals = eval_f(scenario, psi, step=step)
                break
            except SolverError:
                continue
        else:
            raise SaemGpError("simulate_dataset: too many solver failures")
        y = f_vals + sigma * rng.standard_normal(f_vals.shape)
        individuals.append((scenario.times.copy(), y))
        psis.append(psi)
    dataset = Dataset(individuals=tuple(individuals))
    if return_psi:
        return dataset, np.stack(psis)
    return dataset


def prefit_banks(config: StudyConfig) -> dict:
    """One emulator bank per design size, shared across replications."""
    sizes = sorted({v.n_design for v in config.variants if v.n_design is not None})
    banks = {}
    for n_d in sizes:
        design = lhs_design(config.box, n_d, seed=config.design_seed)
        evals = eval_f(config.scenario, design.points, step=config.solver_step).T  # (T, n_D)
        banks[n_d] = fit_bank(
            design, config.scenario.times, evals,
            regressors=RegressorSpec(REGRESSORS_LINEAR),
            phi_bounds=config.phi_bounds, nugget=config.nugget,
        )
    return banks


def _variant_object(spec: VariantSpec, config: StudyConfig, banks: dict):
    if spec.name == "exact":
        return Exact(config.scenario, step=config.solver_step)
    bank = banks[spec.n_design]
    return {"simple": Simple, "intermediate": Intermediate, "complete": Complete}[spec.name](bank)


def _study_param_indices(d: int):
    """Report rows: the means, the variance diagonal, and the noise variance."""
    names = param_names(d)
    keep = [f"mu_{k + 1}" for k in range(d)]
    keep += [f"omega_{k + 1}{k + 1}" for k in range(d)]
    keep.append("sigma2")
    return keep, [names.index(n) for n in keep]


def _run_one_replication(config: StudyConfig, banks: dict, rep: int):
    seed = int(np.random.SeedSequence((config.seed, rep)).generate_state(1)[0])
    dataset = simulate_dataset(config.truth, config.scenario, config.n_individuals,
                               seed=seed, step=config.solver_step)
    theta_init = config.theta_init if config.theta_init is not None else config.truth
    out = {}
    for spec in config.variants:
        variant = _variant_object(spec, config, banks)
        saem_cfg = SaemConfig(
            k_iters=config.saem.k_iters, m_mcmc=config.saem.m_mcmc,
            burn_in=config.saem.burn_in, sa_exponent=config.saem.sa_exponent,
            proposal_scale=config.saem.proposal_scale,
            seed=seed + 1, fisher_iters=config.saem.fisher_iters,
        )
        try:
            fit = run_saem(variant, dataset, saem_cfg, theta_init)
            if spec.name != "complete":
                fisher_information(variant, dataset, fit, saem_cfg)
            out[spec.label] = (
                theta_to_vector(fit.theta_hat),
                fit.std_errors,
                fit.diagnostics["wall_time_s"],
            )
        except SaemGpError as exc:
            out[spec.label] = ("failed", str(exc), 0.0)
    return out


def run_study(config: StudyConfig, workers: int = 1) -> StudyResult:
    """Replicate simulate -> fit over all variants and aggregate the metrics.

    bias% = 100 mean(est - truth)/truth, RMSE% = 100 sqrt(mean((est -
    truth)^2))/|truth|, coverage% of the 95% Wald interval.  Replication
    failures are excluded with a count; more than 10% failing fails the
    study.
    """
    banks = prefit_banks(config)
    d = config.truth.dim
    keep_names, keep_idx = _study_param_indices(d)
    truth_vec = theta_to_vector(config.truth)[keep_idx]
    reps = range(config.replications)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one_replication, [config] * config.replications,
                                    [banks] * config.replications, reps))
    else:
        results = [_run_one_replication(config, banks, rep) for rep in reps]
    records = {spec.label: [] for spec in config.variants}
    wall = {spec.label: 0.0 for spec in config.variants}
    failed = {spec.label: 0 for spec in config.variants}
    for res in results:
        for label, (est, se, dt) in res.items():
            if isinstance(est, str):
                failed[label] += 1
                continue
            records[label].append((est[keep_idx], None if se is None else se[keep_idx]))
            wall[label] += dt
    bias, rmse, coverage = {}, {}, {}
    for label, recs in records.items():
        if failed[label] > 0.1 * config.replications:
            raise SaemGpError(f"variant {label}: more than 10% of replications failed")
        if not recs:
            continue
        est = np.stack([r[0] for r in recs])
        err = est - truth_vec
        bias[label] = 100.0 * err.mean(axis=0) / truth_vec
        rmse[label] = 100.0 * np.sqrt((err**2).mean(axis=0)) / np.abs(truth_vec)
        ses = [r[1] for r in recs if r[1] is not None]
        if ses:
            se_arr = np.stack(ses)
            est_cov = np.stack([r[0] for r in recs if r[1] is not None])
            hits = np.abs(est_cov - truth_vec) <= Z_95 * se_arr
            coverage[label] = 100.0 * np.nanmean(hits, axis=0)
        else:
            coverage[label] = np.full(truth_vec.size, np.nan)
    return StudyResult(
        parameters=keep_names, truth_values=truth_vec, records=records,
        bias_pct=bias, rmse_pct=rmse, coverage_pct=coverage,
        wall_time_s=wall, n_failed=failed,
    )


def emit_table(result: StudyResult, fmt: str = "csv") -> str:
    """Render the study as CSV or markdown; round-half-even to 3 decimals."""
    if fmt not in ("csv", "markdown"):
        raise DomainError(f"unknown table format: {fmt!r}")
    header = ["parameter", "variant", "n_D", "bias", "RMSE", "coverage"]
    rows = []
    for label in result.bias_pct:
        name, _, n_d = label.partition(":")
        for j, param in enumerate(result.parameters):
            cov = result.coverage_pct[label][j]
            rows.append([
                param, name, n_d or "-",
                _round3(result.bias_pct[label][j]),
                _round3(result.rmse_pct[label][j]),
                "-" if np.isnan(cov) else _round3(cov),
            ])
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(",".join(header) + "\n")
        for row in rows:
            buf.write(",".join(str(v) for v in row) + "\n")
        return buf.getvalue()
    widths = [max(len(str(x)) for x in [h] + [r[i] for r in rows]) for i, h in enumerate(header)] \
        if rows else [len(h) for h in header]
    lines = ["| " + " | ".join(str(h).ljust(w) for h, w in zip(header, widths)) + " |",
             "|" + "|".join("-" * (w + 2) for w in widths) + "|"]
    for row in rows:
        lines.append("| " + " | ".join(str(v).ljust(w) for v, w in zip(row, widths)) + " |")
    return "\n".join(lines) + "\n"


def _round3(value: float):
    return float(np.format_float_positional(value, precision=3, unique=False, fractional=True))


def result_to_json(result: StudyResult) -> dict:
    return {
        "parameters": result.parameters,
        "truth": result.truth_values.tolist(),
        "bias_pct": {k: v.tolist() for k, v in result.bias_pct.items()},
        "rmse_pct": {k: v.tolist() for k, v in result.rmse_pct.items()},
        "coverage_pct": {k: v.tolist() for k, v in result.coverage_pct.items()},
        "wall_time_s": result.wall_time_s,
        "n_failed": result.n_failed,
    }


def save_result(result: StudyResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result_to_json(result), fh, indent=1)
