"""Population intervention indirect effects via a generalized front-door functional.

The PIIE contrasts the observed mean outcome with the mean outcome had the
mediator followed the law it would have under a reference exposure level,
while exposure keeps its natural value. It is identified without assuming
the exposure-outcome relation is unconfounded, and the identifying
functional coincides with the classical front-door formula when exposure
has no direct effect on the outcome.
"""

from .data import (
    DataError,
    Dataset,
    DesignMatrix,
    FormulaError,
    FormulaSpec,
    Roles,
    build_design,
    dataset_from_frame,
    load_csv,
    parse_formula,
)
from .estimators import (
    EstimationConfig,
    NuisanceSet,
    PiieResult,
    PositivityError,
    PsiEstimate,
    UnsupportedModelError,
    closed_form_piie_variance,
    closed_form_psi,
    eif_contributions,
    estimate_piie,
    estimate_psi,
    estimate_psi_dr,
    estimate_psi_mle,
    estimate_psi_mle_alt,
    estimate_psi_sp1,
    estimate_psi_sp2,
    fit_nuisances,
    integrate_over_mediator,
    psi_from_nuisances,
)
from .glm import (
    LinearFit,
    LogisticFit,
    MediatorModel,
    fit_linear,
    fit_logistic,
    fit_mediator,
    mediator_density,
    score_contributions,
)
from .inference import (
    ComparisonResult,
    VarianceReport,
    bootstrap_variance,
    hausman_compare,
    sandwich_variance,
    stacked_system,
    wald_ci,
)
from .simulate import (
    DecompositionReport,
    DgpParams,
    DiscreteJoint,
    OCTable,
    OracleTruth,
    ScenarioSpec,
    brute_force_psi,
    decomposition_check,
    generate_dgp,
    oracle_truth,
    run_operating_characteristics,
    scenario,
    world_from_counts,
)

__version__ = "0.1.0"
