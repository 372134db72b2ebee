"""Random-bit metering and exact verification for stability transforms."""

from .core import (
    BOTTOM,
    Joint,
    MeteredAlgorithm,
    OutputLaw,
    Sample,
    StatisticalTask,
    TaskParameters,
    attach_laws,
    exact_law_over_tapes,
    is_correct,
    make_oracle_algorithm,
    make_tape_oracle,
    output_law,
    sample,
    simulate,
)
from .distribution import FiniteDistribution, hockey_stick
from .tape import BitTape, CompressedSampler, compress_distribution, enumerate_tapes, fresh_tape

__version__ = "0.1.0"
from .dp import (
    DpPipelineParams,
    SelectionDataset,
    check_perfect_generalization,
    dp_select,
    dp_to_stab,
    selection_mechanism,
    stab_to_dp,
)
from .harness import ExperimentConfig, run_acceptance, run_experiment, sweep
from .pac import (
    HypothesisClass,
    LabeledSample,
    RealizableListLearner,
    agnostic_reduce,
    agnostic_replicable_learner,
    all_labelings,
    default_realizable_list_learner,
    err,
    labeled_distribution,
)
from .rep import (
    ThresholdingParams,
    amplify_replicability,
    derandomize_hh,
    glob_to_rep,
    rep_to_glob,
    threshold_analysis,
)
from .reporting import ReportRow
from .verify import (
    audit_dp_exact,
    estimate_confidence,
    estimate_global_stability,
    estimate_replicability,
    find_heavy_hitters,
    neighbors,
)
