"""unitype: collective entity typing over a unified hierarchical label space.

Merges the label sets of diverse mention-annotated datasets into one tree,
trains a single hierarchy-aware classifier on the pooled data, and evaluates
it against silo and multi-head ensemble baselines with and without origin
knowledge.
"""

from .oracle import Assertion, LabelId, Relation, SpaceOracle
from .taxonomy import (
    LabelMapping,
    UnifiedHierarchy,
    build_uhls,
    candidate_set,
    insert_label,
    load_hierarchy,
    save_hierarchy,
    subtree,
)
from .ingestion import (
    DatasetDescriptor,
    MentionInstance,
    SplitSet,
    load_dataset,
    merge_tests,
    pool_train,
    split_dataset,
)
from .encoder import EncoderConfig, EncoderParams, HashedMeanEncoder
from .predictor import TrainingConfig, TypePredictor, UnifiedModel
from .ensembles import (
    ArbitrationTrace,
    MultiHeadModel,
    SiloEnsemble,
    hcl_select,
    rhcl_select,
    train_multihead,
    train_silo,
)
from .evaluation import (
    EvaluationReport,
    PredictionRecord,
    RuleTag,
    best_effort_correct,
    evaluate_idealistic,
    evaluate_realistic,
    fine_grained_eval,
    micro_f1,
)
from .synthbench import SynthSpec, TrueTree, PseudoDataset, generate, standard_benchmark_spec

__version__ = "0.1.0"

__all__ = [
    "Assertion", "LabelId", "Relation", "SpaceOracle",
    "LabelMapping", "UnifiedHierarchy", "build_uhls", "candidate_set",
    "insert_label", "load_hierarchy", "save_hierarchy", "subtree",
    "DatasetDescriptor", "MentionInstance", "SplitSet", "load_dataset",
    "merge_tests", "pool_train", "split_dataset",
    "EncoderConfig", "EncoderParams", "HashedMeanEncoder",
    "TrainingConfig", "TypePredictor", "UnifiedModel",
    "ArbitrationTrace", "MultiHeadModel", "SiloEnsemble",
    "hcl_select", "rhcl_select", "train_multihead", "train_silo",
    "EvaluationReport", "PredictionRecord", "RuleTag", "best_effort_correct",
    "evaluate_idealistic", "evaluate_realistic", "fine_grained_eval", "micro_f1",
    "SynthSpec", "TrueTree", "PseudoDataset", "generate", "standard_benchmark_spec",
    "__version__",
]
