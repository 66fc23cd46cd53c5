"""Iterative counterfactual data augmentation.

Binary-variable operators that characterize when iterated augmentation
converges, plus a synthetic multi-aspect corpus and a sentence-level
rationale learner that demonstrate the full loop without any neural network.
"""

from .corpus import CorpusSpec, Dataset, Document, corpus_stats, generate_corpus
from .driver import ICDAConfig, ICDATrace, RationaleSets, run_icda
from .operators import (
    AugmentedConditionals,
    ErrorRates,
    IterationTrace,
    SimConfig,
    ThresholdResult,
    augment_conditionals,
    augmented_info_gap,
    beta_sweep,
    cda_benefit,
    exact_selection_error,
    find_threshold_alpha,
    iteration_step,
    run_fixed_point,
    selection_error,
)
from .probmodel import (
    BinaryJoint,
    Observation,
    ThetaSpec,
    binary_entropy,
    delta_info,
    make_joint,
    mutual_information_symmetric,
    sample_observations,
)
from .rationale import (
    RationaleChoice,
    RationaleModel,
    SelectorTrainConfig,
    degeneration_check,
    predict,
    rationale_precision,
    select_rationale,
    train_selector,
)

__version__ = "0.1.0"
