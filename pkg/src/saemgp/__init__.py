"""SAEM-MCMC estimation for nonlinear mixed-effects models whose regression
function is an expensive computer model, accelerated by Kriging surrogates."""

from .design import Box, Design, covering_distance, lhs_design
from .emulator import (
    Emulator,
    EmulatorBank,
    EmulatorParams,
    KernelSpec,
    RegressorSpec,
    fit_bank,
    fit_emulator,
    gaussian_kernel,
    gp_profile_loglik,
)
from .likelihood import (
    Complete,
    Dataset,
    Exact,
    Intermediate,
    PopulationParams,
    Simple,
    cond_loglik_complete,
    cond_loglik_exact,
    cond_loglik_intermediate,
    cond_loglik_simple,
    marginal_loglik_quadrature,
)
from .models import (
    PkScenario,
    eval_f,
    first_order_analytic,
    first_order_scenario,
    michaelis_menten_scenario,
    solve_first_order_pk,
    solve_mm_pk,
)
from .saem import (
    FitReport,
    SaemConfig,
    SufficientStats,
    fisher_information,
    m_step,
    mh_step_complete,
    mh_step_individual,
    residual_posterior_complete,
    residual_posterior_intermediate,
    run_saem,
    sa_update,
)
from .bench import StudyConfig, StudyResult, VariantSpec, emit_table, run_study, simulate_dataset

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
