"""Constrained decoding of entity state changes in procedural text."""

from .constraints import HardConstraintConfig, Violation, build_mention_index, violations
from .core import (
    NO_CHANGE,
    NONEXISTENT,
    UNKNOWN,
    ActionSequence,
    Entity,
    EntityState,
    Grid,
    Kind,
    Location,
    Paragraph,
    Sentence,
    StateChange,
    StepAction,
    grid_from_sequence,
    sequence_from_grid,
)
from .decoder import DecoderConfig, beam_search, exhaustive_search
from .errors import (
    DeadEnd,
    DimensionError,
    GoldPathPruned,
    IllegalTransition,
    InstanceTooLarge,
    MissingPrediction,
    ProcStateError,
    SchemaError,
)
from .evaluation import derive_answers, evaluate
from .priors import PriorTable, build_priors, prior
from .scorer import LexicalScorerModel, StepLogits, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "NO_CHANGE", "NONEXISTENT", "UNKNOWN",
    "ActionSequence", "DeadEnd", "DecoderConfig", "DimensionError", "Entity", "EntityState",
    "GoldPathPruned", "Grid", "HardConstraintConfig", "IllegalTransition", "InstanceTooLarge", "Kind",
    "LexicalScorerModel", "Location", "MissingPrediction", "Paragraph", "PriorTable", "ProcStateError",
    "SchemaError", "Sentence", "StateChange", "StepAction", "StepLogits", "TrainConfig", "Violation",
    "beam_search", "build_mention_index", "build_priors", "derive_answers", "evaluate",
    "exhaustive_search", "grid_from_sequence", "prior", "sequence_from_grid", "train", "violations",
]
