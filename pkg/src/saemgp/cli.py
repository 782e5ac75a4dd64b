"""Batch command-line front end.

Commands: simulate, emulate, fit, bench.  Every command reads one YAML
config (see config.py for the schema), writes deterministic primary
outputs into --out-dir, and confines timestamps to a sidecar run.log.

Exit codes: 0 success, 1 computation failure, 2 config/usage error,
3 SAEM divergence.
"""

from __future__ import annotations

import datetime
import sys
from pathlib import Path

import click
import numpy as np

from . import bench as bench_mod
from . import config as config_mod
from .config import ConfigError
from .design import covering_distance, lhs_design
from .emulator import (
    BANK_NUGGET,
    REGRESSORS_LINEAR,
    RegressorSpec,
    fit_bank,
    load_bank,
    loo_rmse,
    save_bank,
)
from .errors import DivergenceError, DomainError, SaemGpError
from .likelihood import (
    Complete,
    Exact,
    Intermediate,
    Simple,
    dataset_from_csv,
    dataset_to_csv,
)
from .models import eval_f
from .report import emulator_quality_figure, study_figure, trajectory_figure
from .saem import fisher_information, run_saem, save_report, trajectories_to_csv

VARIANTS = ("exact", "simple", "intermediate", "complete")


def _log(out_dir: Path, message: str) -> None:
    stamp = datetime.datetime.now().isoformat(timespec="seconds")
    with open(out_dir / "run.log", "a") as fh:
        fh.write(f"{stamp} {message}\n")


def _load(config_path, seed, out_dir):
    try:
        cfg = config_mod.load_config(config_path)
    except (ConfigError, OSError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


@click.group()
@click.option("--config", "config_path", required=True, type=click.Path(exists=False))
@click.option("--seed", type=int, default=None, help="override the config seeds")
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--dry-run", is_flag=True, help="validate and print the plan, compute nothing")
@click.option("--out-dir", type=click.Path(), default="out", show_default=True)
@click.pass_context
def main(ctx, config_path, seed, threads, dry_run, out_dir):
    """SAEM-MCMC estimation with Gaussian-process surrogates."""
    ctx.ensure_object(dict)
    ctx.obj.update(config_path=config_path, seed=seed, threads=threads,
                   dry_run=dry_run, out_dir=out_dir)


@main.command()
@click.pass_context
def simulate(ctx):
    """Simulate a dataset from the generative model; writes dataset.csv."""
    cfg, out = _load(ctx.obj["config_path"], ctx.obj["seed"], ctx.obj["out_dir"])
    try:
        scenario = config_mod.scenario_from_config(cfg)
        sim = cfg.get("simulate") or {}
        truth = config_mod.population_from_config((cfg.get("study") or {}).get("truth"), "study.truth")
        n = int(sim.get("n_individuals", (cfg.get("study") or {}).get("n_individuals", 0)))
        if n < 1:
            raise ConfigError("simulate.n_individuals must be >= 1")
        seed = ctx.obj["seed"] if ctx.obj["seed"] is not None else int(sim.get("seed", 0))
        step = float(sim.get("solver_step", 0.01))
    except (ConfigError, DomainError, KeyError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    if ctx.obj["dry_run"]:
        click.echo(f"plan: simulate {n} individuals, scenario={scenario.kind}, seed={seed}")
        return
    dataset = bench_mod.simulate_dataset(truth, scenario, n, seed=seed, step=step)
    path = out / "dataset.csv"
    dataset_to_csv(dataset, path)
    _log(out, f"simulate wrote {path} ({dataset.n_tot} observations)")
    click.echo(str(path))


@main.command()
@click.pass_context
def emulate(ctx):
    """Fit an emulator bank on a design; writes bank.json + quality report."""
    cfg, out = _load(ctx.obj["config_path"], ctx.obj["seed"], ctx.obj["out_dir"])
    try:
        scenario = config_mod.scenario_from_config(cfg)
        box = config_mod.box_from_config(cfg)
        dg = cfg["design"]
        n_d = int(dg["n_d"])
        seed = ctx.obj["seed"] if ctx.obj["seed"] is not None else int(dg.get("seed", 0))
        em_cfg = cfg.get("emulator") or {}
        nugget = float(em_cfg.get("nugget", BANK_NUGGET))
        phi_bounds = tuple(em_cfg.get("phi_bounds", (1e-3, 1e3)))
        basis = em_cfg.get("regressors", REGRESSORS_LINEAR)
        regressors = RegressorSpec(basis)
    except (ConfigError, DomainError, KeyError, TypeError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    if ctx.obj["dry_run"]:
        click.echo(f"plan: emulate {scenario.kind}, n_d={n_d}, {scenario.times.size} time points")
        return
    design = lhs_design(box, n_d, seed=seed)
    try:
        evals = eval_f(scenario, design.points).T
        bank = fit_bank(design, scenario.times, evals, regressors=regressors,
                        phi_bounds=phi_bounds, nugget=nugget)
    except SaemGpError as exc:
        click.echo(f"emulator fit failed: {exc}", err=True)
        sys.exit(1)
    bank_path = out / "bank.json"
    save_bank(bank, bank_path)
    cover = covering_distance(design, resolution=21)
    loos = [loo_rmse(e) for e in bank.emulators]
    report_path = out / "emulate_report.csv"
    with open(report_path, "w") as fh:
        fh.write("time,sigma2,phi,loo_rmse\n")
        for t, e, loo in zip(bank.times, bank.emulators, loos):
            fh.write(f"{float(t)!r},{float(e.params.sigma2)!r},{float(e.params.phi)!r},{float(loo)!r}\n")
        fh.write(f"# covering_distance,{float(cover)!r}\n")
        fh.write(f"# solver_calls_per_time,{n_d}\n")
    emulator_quality_figure(
        bank.times, [e.params.sigma2 for e in bank.emulators],
        [e.params.phi for e in bank.emulators], loos, out / "emulate_report.png",
    )
    _log(out, f"emulate wrote {bank_path} and {report_path}")
    click.echo(str(bank_path))


@main.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=False))
@click.option("--variant", required=True, type=click.Choice(VARIANTS))
@click.option("--bank", "bank_path", type=click.Path(), default=None)
@click.pass_context
def fit(ctx, data_path, variant, bank_path):
    """Fit one model variant to a dataset; writes report.json + trajectories."""
    cfg, out = _load(ctx.obj["config_path"], ctx.obj["seed"], ctx.obj["out_dir"])
    try:
        theta_init = config_mod.population_from_config(cfg.get("init"), "init")
        saem_cfg = config_mod.saem_from_config(cfg, seed_override=ctx.obj["seed"])
        if variant == "exact":
            scenario = config_mod.scenario_from_config(cfg)
        elif bank_path is None:
            raise ConfigError(f"--variant {variant} requires --bank pointing at a bank JSON")
    except (ConfigError, DomainError, KeyError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    try:
        dataset = dataset_from_csv(data_path)
    except (OSError, DomainError) as exc:
        click.echo(f"dataset error: {exc}", err=True)
        sys.exit(2)
    if variant == "exact":
        model = Exact(scenario)
    else:
        bank = load_bank(bank_path)
        model = {"simple": Simple, "intermediate": Intermediate, "complete": Complete}[variant](bank)
    if variant == "complete":
        n_tot = dataset.n_tot
        click.echo(f"warning: complete variant assembles a {n_tot}x{n_tot} covariance "
                   f"per MCMC candidate; this is expensive", err=True)
    if ctx.obj["dry_run"]:
        click.echo(f"plan: fit variant={variant}, N={dataset.n_individuals}, "
                   f"k_iters={saem_cfg.k_iters}")
        return
    try:
        report = run_saem(model, dataset, saem_cfg, theta_init)
        if variant != "complete":
            fisher_information(model, dataset, report, saem_cfg)
    except DivergenceError as exc:
        click.echo(f"divergence: {exc}", err=True)
        sys.exit(3)
    except SaemGpError as exc:
        click.echo(f"fit failed: {exc}", err=True)
        sys.exit(1)
    save_report(report, out / "report.json")
    trajectories_to_csv(report, out / "trajectories.csv")
    trajectory_figure(report, out / "trajectories.png")
    _log(out, f"fit variant={variant} wrote report.json")
    click.echo(str(out / "report.json"))


@main.command()
@click.option("--replications", type=int, default=None, help="override study.replications")
@click.option("--variants", "variants_opt", default=None,
              help="comma-separated override, e.g. 'exact,simple:50'")
@click.pass_context
def bench(ctx, replications, variants_opt):
    """Run a replicated study; writes study.csv / study.md / study.json."""
    cfg, out = _load(ctx.obj["config_path"], ctx.obj["seed"], ctx.obj["out_dir"])
    try:
        scenario = config_mod.scenario_from_config(cfg)
        box = config_mod.box_from_config(cfg)
        st = cfg.get("study") or {}
        truth = config_mod.population_from_config(st.get("truth"), "study.truth")
        theta_init = (config_mod.population_from_config(cfg.get("init"), "init")
                      if cfg.get("init") else None)
        saem_cfg = config_mod.saem_from_config(cfg)
        if variants_opt:
            specs = []
            for part in variants_opt.split(","):
                name, _, n_d = part.strip().partition(":")
                specs.append(bench_mod.VariantSpec(name, int(n_d) if n_d else None))
        else:
            specs = [bench_mod.VariantSpec(v["name"], v.get("n_d"))
                     for v in (st.get("variants") or [])]
        if not specs:
            raise ConfigError("study.variants is empty")
        study = bench_mod.StudyConfig(
            scenario=scenario, truth=truth, box=box,
            n_individuals=int(st["n_individuals"]),
            replications=int(replications if replications is not None else st["replications"]),
            variants=tuple(specs), saem=saem_cfg,
            seed=int(ctx.obj["seed"] if ctx.obj["seed"] is not None else st.get("seed", 0)),
            solver_step=float(st.get("solver_step", 0.01)),
            design_seed=int((cfg.get("design") or {}).get("seed", 101)),
            theta_init=theta_init,
        )
    except (ConfigError, DomainError, KeyError, TypeError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    if ctx.obj["dry_run"]:
        click.echo(f"plan: bench {study.replications} replications, N={study.n_individuals}, "
                   f"variants={[s.label for s in study.variants]}")
        return
    try:
        result = bench_mod.run_study(study, workers=ctx.obj["threads"])
    except DivergenceError as exc:
        click.echo(f"divergence: {exc}", err=True)
        sys.exit(3)
    except SaemGpError as exc:
        click.echo(f"study failed: {exc}", err=True)
        sys.exit(1)
    (out / "study.csv").write_text(bench_mod.emit_table(result, "csv"))
    (out / "study.md").write_text(bench_mod.emit_table(result, "markdown"))
    bench_mod.save_result(result, out / "study.json")
    study_figure(result, out / "study.png")
    _log(out, "bench wrote study.csv/md/json")
    click.echo(str(out / "study.csv"))


if __name__ == "__main__":
    main()
