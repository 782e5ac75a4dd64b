"""Simulation-study plumbing: dataset simulation, aggregation, tables."""

import csv
import io
import math

import numpy as np
import pytest

from saemgp import bench
from saemgp.bench import (
    StudyConfig,
    StudyResult,
    VariantSpec,
    emit_table,
    result_to_json,
    run_study,
    simulate_dataset,
)
from saemgp.design import Box
from saemgp.errors import DomainError
from saemgp.likelihood import PopulationParams
from saemgp.models import eval_f, first_order_scenario
from saemgp.saem import SaemConfig

FO_TRUTH = PopulationParams(
    mu=[-2.52, 0.4, -3.22], omega=0.01 * np.eye(3), sigma_eps2=0.01
)


class TestVariantSpec:
    def test_labels(self):
        assert VariantSpec("exact").label == "exact"
        assert VariantSpec("simple", 25).label == "simple:25"

    def test_validation(self):
        with pytest.raises(DomainError):
            VariantSpec("bogus", 10)
        with pytest.raises(DomainError):
            VariantSpec("simple")  # needs a design size


class TestSimulateDataset:
    def test_first_order_observation_count(self):
        ds = simulate_dataset(FO_TRUTH, first_order_scenario(), 36, seed=0)
        assert ds.n_individuals == 36
        assert ds.n_tot == 324

    def test_degenerate_noise_recovers_mean_curve(self):
        tiny = PopulationParams(mu=FO_TRUTH.mu, omega=1e-14 * np.eye(3),
                                sigma_eps2=1e-14)
        scenario = first_order_scenario()
        ds = simulate_dataset(tiny, scenario, 4, seed=1)
        ref = eval_f(scenario, np.asarray(FO_TRUTH.mu))
        for _, y in ds.individuals:
            assert np.allclose(y, ref, atol=1e-5)

    def test_deterministic_per_seed(self):
        a = simulate_dataset(FO_TRUTH, first_order_scenario(), 5, seed=7)
        b = simulate_dataset(FO_TRUTH, first_order_scenario(), 5, seed=7)
        for (_, ya), (_, yb) in zip(a.individuals, b.individuals):
            assert np.array_equal(ya, yb)

    def test_psi_sample_mean_clt(self):
        scenario = first_order_scenario(times=(0.25,))
        n = 10_000
        _, psi = simulate_dataset(FO_TRUTH, scenario, n, seed=3, step=0.25,
                                  return_psi=True)
        se = np.sqrt(np.diag(FO_TRUTH.omega) / n)
        assert np.all(np.abs(psi.mean(axis=0) - FO_TRUTH.mu) < 3.0 * se)


def _tiny_study(replications=1, variants=(VariantSpec("exact"),), seed=5):
    scenario = first_order_scenario()
    mu = np.asarray(FO_TRUTH.mu)
    return StudyConfig(
        scenario=scenario, truth=FO_TRUTH, box=Box(mu - 1.0, mu + 1.0),
        n_individuals=8, replications=replications, variants=tuple(variants),
        saem=SaemConfig(k_iters=12, burn_in=6, m_mcmc=3, fisher_iters=25), seed=seed,
        solver_step=0.05,
    )


class TestRunStudy:
    def test_replications_must_be_positive(self):
        with pytest.raises(DomainError):
            _tiny_study(replications=0)

    def test_single_replication_rmse_equals_abs_bias(self):
        result = run_study(_tiny_study(replications=1))
        bias = result.bias_pct["exact"]
        rmse = result.rmse_pct["exact"]
        assert np.allclose(np.abs(bias), rmse, rtol=1e-12)
        assert result.n_failed["exact"] == 0
        assert result.wall_time_s["exact"] > 0.0

    def test_stubbed_estimates_give_zero_bias_full_coverage(self, monkeypatch):
        config = _tiny_study(replications=3)
        from saemgp.saem import theta_to_vector

        truth_vec = theta_to_vector(config.truth)

        def stub(cfg, banks, rep):
            return {"exact": (truth_vec.copy(), np.full(truth_vec.size, 0.5), 0.01)}

        monkeypatch.setattr(bench, "_run_one_replication", stub)
        result = run_study(config)
        assert np.allclose(result.bias_pct["exact"], 0.0)
        assert np.allclose(result.rmse_pct["exact"], 0.0)
        assert np.allclose(result.coverage_pct["exact"], 100.0)

    def test_end_to_end_exact_small(self):
        result = run_study(_tiny_study(replications=2))
        assert result.parameters == [
            "mu_1", "mu_2", "mu_3", "omega_11", "omega_22", "omega_33", "sigma2",
        ]
        assert result.bias_pct["exact"].shape == (7,)
        assert np.all(np.isfinite(result.rmse_pct["exact"]))
        cov = result.coverage_pct["exact"]
        assert np.all((cov >= 0.0) & (cov <= 100.0))
        obj = result_to_json(result)
        assert obj["parameters"] == result.parameters


class TestEmitTable:
    def _one_row_result(self):
        return StudyResult(
            parameters=["mu_1"], truth_values=np.array([1.0]),
            records={}, bias_pct={"simple:25": np.array([1.23456])},
            rmse_pct={"simple:25": np.array([2.5])},
            coverage_pct={"simple:25": np.array([94.0])},
            wall_time_s={"simple:25": 1.0}, n_failed={"simple:25": 0},
        )

    def test_empty_result_header_only(self):
        empty = StudyResult(parameters=[], truth_values=np.array([]), records={},
                            bias_pct={}, rmse_pct={}, coverage_pct={},
                            wall_time_s={}, n_failed={})
        assert emit_table(empty, "csv") == "parameter,variant,n_D,bias,RMSE,coverage\n"
        md = emit_table(empty, "markdown")
        assert md.splitlines()[0].startswith("| parameter")
        assert len(md.strip().splitlines()) == 2

    def test_one_data_row(self):
        text = emit_table(self._one_row_result(), "csv")
        lines = text.strip().splitlines()
        assert len(lines) == 2
        assert lines[1] == "mu_1,simple,25,1.235,2.5,94.0"

    def test_csv_roundtrip_at_printed_precision(self):
        result = self._one_row_result()
        text = emit_table(result, "csv")
        rows = list(csv.DictReader(io.StringIO(text)))
        assert len(rows) == 1
        row = rows[0]
        assert float(row["bias"]) == round(float(result.bias_pct["simple:25"][0]), 3)
        assert float(row["RMSE"]) == 2.5
        assert float(row["coverage"]) == 94.0
        assert emit_table(result, "csv") == text  # emit is deterministic

    def test_unknown_format(self):
        with pytest.raises(DomainError):
            emit_table(self._one_row_result(), "html")

    def test_markdown_layout(self):
        md = emit_table(self._one_row_result(), "markdown")
        lines = md.strip().splitlines()
        assert len(lines) == 3
        assert all(line.startswith("|") and line.endswith("|") for line in lines)
