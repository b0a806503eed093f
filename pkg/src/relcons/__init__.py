"""Mining relation constraints from a KB and using them as a training loss."""

from .encoding import CoherentVectors, SemanticRuleSets, build_encoding
from .indicators import IndicatorFlags, indicators
from .inference import PredictionSet, ViolationReport, count_violations, repair_predictions
from .kb import RelationVocabulary, Triple, TripleStore, load_triples
from .loss import Batch, LossReport, batch_constraint_loss, grad_check
from .mining import ConstraintSets, load_constraints, mine_constraints, save_constraints
from .synthetic import SyntheticDatasetSpec, generate_synthetic
from .training import ClassifierModel, ScheduleConfig, TrainConfig, lambda_at, train

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "ClassifierModel",
    "CoherentVectors",
    "ConstraintSets",
    "IndicatorFlags",
    "LossReport",
    "PredictionSet",
    "RelationVocabulary",
    "ScheduleConfig",
    "SemanticRuleSets",
    "SyntheticDatasetSpec",
    "TrainConfig",
    "Triple",
    "TripleStore",
    "ViolationReport",
    "batch_constraint_loss",
    "build_encoding",
    "count_violations",
    "generate_synthetic",
    "grad_check",
    "indicators",
    "lambda_at",
    "load_constraints",
    "load_triples",
    "mine_constraints",
    "repair_predictions",
    "save_constraints",
    "train",
]
