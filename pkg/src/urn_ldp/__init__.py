"""Simulation, exact computation and bound verification for nonlinear unbalanced urns."""

__version__ = "0.1.0"

from .drift import (
    DriftProfile,
    EquilibriumReport,
    drift_derivative,
    drift_eval,
    equilibrium_solve,
    interval_istar,
    monotonicity_check,
    remark_condition_checks,
)
from .exact import dp_distribution, exact_moments, exact_tail_probability
from .ldp import (
    Lemma31Params,
    TailEstimate,
    bound_verification,
    lemma31_bound,
    mc_tail_estimate,
    rate_fit,
)
from .model import (
    Outcome,
    ReplacementMatrix,
    SkewSpec,
    UrnConfig,
    UrnState,
    draw_probability,
    simulate_path,
    skew_derivative,
    skew_eval,
    urn_step,
    validate_config,
)
from .sa import condition_audit, run_sa, synthetic_problem, tail_experiment, urn_as_sa
