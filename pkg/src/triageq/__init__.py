"""triageq: wait-time impact analysis for AI triage in reading queues.

Two engines over one declarative workflow model: closed-form multi-class
queueing results and a two-world discrete-event simulator, cross-validated
against each other.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    EmptyClassError,
    TheoryUnsupportedError,
    TriageqError,
    UnstableQueueError,
    WorkflowValidationError,
)
from .experiments import (
    ALL_CONFIGURATIONS,
    AgreementReport,
    RocCurve,
    Scenario,
    binormal_roc,
    build_experiment,
    compare_once,
    relative_error,
    sweep_prevalence,
    sweep_readtime,
    sweep_roc,
    sweep_traffic,
)
from .probability import (
    ClassProbabilities,
    ClassRates,
    class_probabilities,
    class_probability_positive,
    class_service_moments,
    composition_of_negative_class,
    composition_of_positive_class,
    effective_positive_arrival,
    posterior_class_given_disease,
    set_positive_probability,
)
from .sim import (
    PatientCase,
    PatientStream,
    ScenarioResult,
    TrialResult,
    generate_stream,
    run_trials,
    run_trials_multi,
    simulate,
    warmup_policy,
)
from .theory import (
    TheoryResult,
    fifo_baseline_wait,
    nonpreemptive_hierarchical_waits,
    nonpreemptive_priority_waits,
    per_disease_waits,
    preemptive_hierarchical_waits,
    preemptive_priority_waits,
    theory_waits,
    wait_difference,
)
from .workflow import (
    AIDevice,
    DiseaseCondition,
    ImageGroup,
    PriorityStructure,
    Workflow,
    WorkflowSpec,
    derive_priority_structure,
    load_config,
    mu_effective,
    resolve_arrival,
    validate,
)
