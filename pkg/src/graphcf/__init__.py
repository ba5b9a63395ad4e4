"""Counterfactual interaction graphs for transaction classification.

A relational GCN scores user-listing interaction subgraphs for the chance
that they contain a transaction; a graph variational autoencoder proposes
nearby graphs that the classifier scores higher.
"""

__version__ = "0.1.0"

from .classifier import ClassifierModel, ModelConfig, TrainConfig, roc_auc, train
from .counterfactual import CounterfactualResult, generate_all, materialize, random_baseline
from .dataset import load_dataset, write_dataset
from .generator import GeneratorConfig, GeneratorModel, LossWeights, Thresholds, train_generator
from .graph import AttributeSchema, InteractionGraph
from .report import StudyReport, emit_report, evaluate
from .sampler import WalkConfig, build_labeled_dataset, random_walk_subgraph
from .synth import SynthConfig, generate_marketplace

__all__ = [
    "AttributeSchema",
    "ClassifierModel",
    "CounterfactualResult",
    "GeneratorConfig",
    "GeneratorModel",
    "InteractionGraph",
    "LossWeights",
    "ModelConfig",
    "StudyReport",
    "SynthConfig",
    "Thresholds",
    "TrainConfig",
    "WalkConfig",
    "build_labeled_dataset",
    "emit_report",
    "evaluate",
    "generate_all",
    "generate_marketplace",
    "load_dataset",
    "materialize",
    "random_baseline",
    "random_walk_subgraph",
    "roc_auc",
    "train",
    "train_generator",
    "write_dataset",
]
