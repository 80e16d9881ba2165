"""Spatio-temporal contrastive session recommender built on a small numpy autodiff core."""
from .dataio import AugmentedExample, Batch, Vocab, make_batches
from .errors import RestcError
from .graphs import Relation, build_cfg, build_msg, propagation_matrix
from .model import RESTC, ModelConfig
from .trainer import TrainConfig, Trainer

__version__ = "0.1.0"

__all__ = [
    "AugmentedExample", "Batch", "Vocab", "make_batches", "RestcError", "Relation", "build_cfg",
    "build_msg", "propagation_matrix", "RESTC", "ModelConfig", "TrainConfig", "Trainer",
]
