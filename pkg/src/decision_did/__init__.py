"""Difference-in-differences with a treatment decision that precedes implementation.

Simulate panels from structural causal models, estimate two-period and
group-time DiD functionals, and check them against interventional ground truth.
"""

from .builtins import (
    BUILTINS,
    StaggeredParams,
    builtin_anticipation_dgp,
    builtin_cars_example,
    builtin_no_anticipation_dgp,
    builtin_staggered_dgp,
)
from .estimators import (
    NEVER_TREATED,
    NOT_YET,
    BootstrapCI,
    EstimateReport,
    EstimationError,
    PositivityError,
    bootstrap_ci,
    cells,
    did_classic,
    did_classic_se,
    group_time_att,
)
from .oracle import (
    AuditResult,
    OracleEstimand,
    OracleSampler,
    SweepTable,
    VerificationReport,
    bias_sweep,
    closed_form_mean,
    oracle_estimand,
    verify_proposition,
)
from .panel import (
    GroupAssignment,
    PanelDataset,
    PanelSchema,
    PanelValidationError,
    audit_assumptions,
    infer_groups,
    load_panel,
    save_panel,
)
from .scm import (
    Affine,
    MaxTerm,
    Node,
    Scm,
    ScmError,
    affine,
    deterministic,
    exogenous,
    sample_interventional,
    sample_observational,
    simulate,
    stochastic,
    validate,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
