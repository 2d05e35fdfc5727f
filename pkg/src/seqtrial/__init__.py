"""Point estimation after two-stage group sequential trials with binary outcomes."""

from .datasets import musec_data, musec_design
from .design import (
    StoppingProfile,
    TrialDesign,
    haybittle_peto_boundaries,
    load_design,
    obf_boundaries,
    stopping_probabilities_mc,
    stopping_probabilities_recursive,
)
from .estimators import (
    ESTIMATORS,
    EstimateSet,
    TwoStageEstimator,
    TwoStageOutcome,
    cbc_mle,
    estimate_all,
    mue,
    pvalue_stagewise,
    ubc_mle,
    ubc_mle_single_step,
    umvcue,
    umvue,
)
from .exceptions import SeqTrialError
from .simulation import (
    BootstrapModel,
    run_bootstrap,
    run_performance_sweep,
    simulate_trials,
)
from .trial_data import (
    BinaryTwoArmData,
    StageSummary,
    cumulative_summary,
    increment_summary,
    load_data,
    pooled_summary,
)

__version__ = "0.1.0"

__all__ = [
    "BinaryTwoArmData", "BootstrapModel", "ESTIMATORS", "EstimateSet", "SeqTrialError",
    "StageSummary", "StoppingProfile", "TrialDesign", "TwoStageEstimator", "TwoStageOutcome",
    "cbc_mle", "cumulative_summary", "estimate_all", "haybittle_peto_boundaries",
    "increment_summary", "load_data", "load_design", "mue", "musec_data", "musec_design",
    "obf_boundaries", "pooled_summary", "pvalue_stagewise", "run_bootstrap",
    "run_performance_sweep", "simulate_trials", "stopping_probabilities_mc",
    "stopping_probabilities_recursive", "ubc_mle", "ubc_mle_single_step", "umvcue", "umvue",
]
