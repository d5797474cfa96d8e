"""Adjoint-equivariant neural layers on semisimple Lie algebras.

Features live in coefficient space relative to a chosen basis; layers act on
the channel axis only, which is what makes them commute with the adjoint
action of the group on each feature vector.
"""

__version__ = "0.1.0"

from . import autodiff, datasets, layers, metrics, platonic, reproduce, verify
from .algebra import (
    GroupElement,
    LieAlgebra,
    PrincipalLogError,
    SpanError,
    build_algebra,
    get_algebra,
)
from .autodiff import Tensor
from .datasets import Dataset, gen_conjugated_testset, gen_platonic_set, gen_regression_set
from .models import Model, ModelSpec, load_checkpoint, save_checkpoint
from .train import TrainConfig, train_model

__all__ = [
    "Dataset",
    "GroupElement",
    "LieAlgebra",
    "Model",
    "ModelSpec",
    "PrincipalLogError",
    "SpanError",
    "Tensor",
    "TrainConfig",
    "autodiff",
    "build_algebra",
    "datasets",
    "gen_conjugated_testset",
    "gen_platonic_set",
    "gen_regression_set",
    "get_algebra",
    "layers",
    "load_checkpoint",
    "metrics",
    "platonic",
    "reproduce",
    "save_checkpoint",
    "train_model",
    "verify",
    "__version__",
]
