"""Dose-finding engine: continual reassessment method and variants.

Public surface re-exported here: working models, inference, the
parameter partition, allocation policies, the trial simulator, and the
live-trial session service.
"""

from .designs import (
    BayesInference,
    DesignPolicy,
    DoseRecommendation,
    EscalationRule,
    MsdSpec,
    RandomizationSpec,
    TwoGroupSpec,
    TwoStageLikelihood,
    initial_dose,
    msd_next_dose,
    next_dose,
    randomized_next_dose,
    two_group_next_dose,
    two_stage_step,
)
from .errors import (
    ConfigError,
    CrmError,
    DoseIndexError,
    FeasibilityError,
    HistoryError,
    NoInteriorMaximumError,
    ParameterDomainError,
    QuadratureError,
    SessionError,
)
from .inference import (
    GammaPrior,
    NormalPrior,
    NoPrior,
    PartitionPrior,
    PatientRecord,
    PosteriorSummary,
    PseudoDataPrior,
    TrialHistory,
    confidence_interval,
    log_likelihood,
    log_marginal_likelihood,
    map_estimate,
    mle,
    posterior,
    posterior_model_weights,
)
from .models import (
    LOGISTIC_2P,
    POWER_DIRECT,
    POWER_EXP,
    ModelClass,
    Skeleton,
    WorkingModel,
    prob_tox,
    prob_tox_deriv,
)
from .partition import (
    ConsistencyReport,
    Partition,
    check_consistency,
    compute_partition,
    estimating_function,
)
from .schema import DesignConfig, parse_design_document, validate_design_document
from .simulator import (
    ForcedOutcome,
    OperatingCharacteristics,
    Scenario,
    TrialResult,
    operating_characteristics,
    run_trial,
)

__version__ = "0.1.0"
