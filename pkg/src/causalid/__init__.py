"""Identification and estimation of treatment effects from censored data."""

from .concepts import ClassPair, DistributionClass, PropensityClass, enumerate_realizable
from .core import (
    CensoredPMF,
    CensoredSamples,
    Grid,
    JointPMF,
    ObservationalStudy,
    PropensityTable,
    ate,
    att,
    censor,
    hte,
    sample_censored,
    validate_study,
)
from .estimate import (
    EstimateReport,
    IPWEstimator,
    OverlapEstimator,
    RDEstimator,
    WeakOverlapEstimator,
    estimate_rd,
    estimate_scenario1,
    estimate_scenario2,
    estimate_scenario3,
)
from .exceptions import (
    CausalIdError,
    ConfigError,
    EstimatorError,
    IdentificationError,
    InvalidStudyError,
    PreconditionError,
)
from .harness import ExperimentConfig, run_experiment
from .identify import (
    brute_force_identifiable,
    build_indistinguishable_pair,
    check_condition1,
    check_condition2,
    check_condition3,
    check_condition6,
)

__version__ = "0.1.0"
