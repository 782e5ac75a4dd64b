"""Declarative run configuration: one YAML tree, schema-checked up front.

Unknown keys are rejected with their path so a typo never silently changes
a run.  All randomness derives from the seeds recorded here.
"""

from __future__ import annotations

import numpy as np
import yaml

from .design import Box
from .errors import DomainError
from .likelihood import PopulationParams
from .models import (
    FIRST_ORDER,
    MICHAELIS_MENTEN,
    PkScenario,
    first_order_scenario,
    michaelis_menten_scenario,
)
from .saem import SaemConfig

SCHEMA_VERSION = 1

_SCHEMA = {
    "schema_version": None,
    "scenario": {"kind": None, "dose": None, "times": None, "fixed": None},
    "design": {"box": {"lower": None, "upper": None}, "n_d": None, "seed": None},
    "emulator": {"kernel": None, "regressors": None, "nugget": None, "phi_bounds": None},
    "saem": {
        "k_iters": None, "m_mcmc": None, "burn_in": None, "sa_exponent": None,
        "proposal_scale": None, "seed": None, "fisher_iters": None,
    },
    "init": {"mu": None, "omega_diag": None, "omega": None, "sigma_eps2": None},
    "study": {
        "n_individuals": None, "replications": None, "seed": None,
        "truth": {"mu": None, "omega_diag": None, "omega": None, "sigma_eps2": None},
        "variants": None, "solver_step": None,
    },
    "simulate": {"n_individuals": None, "seed": None, "solver_step": None},
    "io": {"out_dir": None},
}


class ConfigError(DomainError):
    """Schema violation; carries the offending key path."""


def _check_keys(node, schema, path=""):
    if schema is None or not isinstance(node, dict):
        return
    for key, value in node.items():
        here = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown configuration key: {here}")
        _check_keys(value, schema[key], here)


def load_config(path) -> dict:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    _check_keys(raw, _SCHEMA)
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")
    return raw


def _require(cfg: dict, section: str) -> dict:
    if section not in cfg:
        raise ConfigError(f"missing configuration section: {section}")
    return cfg[section]


def scenario_from_config(cfg: dict) -> PkScenario:
    sc = _require(cfg, "scenario")
    kind = sc.get("kind")
    kwargs = {}
    if "dose" in sc:
        kwargs["dose"] = float(sc["dose"])
    if "times" in sc:
        kwargs["times"] = np.asarray(sc["times"], float)
    if kind == MICHAELIS_MENTEN:
        scenario = michaelis_menten_scenario(**kwargs)
        if "fixed" in sc and sc["fixed"]:
            scenario = PkScenario(kind=kind, dose=scenario.dose, times=scenario.times,
                                  fixed={k: float(v) for k, v in sc["fixed"].items()})
        return scenario
    if kind == FIRST_ORDER:
        return first_order_scenario(**kwargs)
    raise ConfigError(f"scenario.kind: unknown value {kind!r}")


def box_from_config(cfg: dict) -> Box:
    dg = _require(cfg, "design")
    box = dg.get("box")
    if not box:
        raise ConfigError("design.box is required")
    return Box(np.asarray(box["lower"], float), np.asarray(box["upper"], float))


def population_from_config(node: dict, path: str) -> PopulationParams:
    if node is None:
        raise ConfigError(f"missing section: {path}")
    mu = np.asarray(node["mu"], float)
    if node.get("omega") is not None:
        omega = np.asarray(node["omega"], float)
    elif node.get("omega_diag") is not None:
        omega = np.diag(np.asarray(node["omega_diag"], float))
    else:
        raise ConfigError(f"{path}: need omega or omega_diag")
    return PopulationParams(mu=mu, omega=omega, sigma_eps2=float(node["sigma_eps2"]))


def saem_from_config(cfg: dict, seed_override=None) -> SaemConfig:
    sa = cfg.get("saem", {}) or {}
    kwargs = {}
    for key in ("k_iters", "m_mcmc", "burn_in", "fisher_iters"):
        if key in sa:
            kwargs[key] = int(sa[key])
    if "sa_exponent" in sa:
        kwargs["sa_exponent"] = float(sa["sa_exponent"])
    if sa.get("proposal_scale") is not None:
        kwargs["proposal_scale"] = np.asarray(sa["proposal_scale"], float)
    kwargs["seed"] = int(seed_override if seed_override is not None else sa.get("seed", 0))
    return SaemConfig(**kwargs)
