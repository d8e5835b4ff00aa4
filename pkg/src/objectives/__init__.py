"""Pluggable objectives with an unbiased stochastic-gradient oracle."""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Type

import numpy as np

from .base import (
    BaseObjective,
    DimensionMismatchError,
    ModelVector,
    NonFiniteError,
    finite_difference_gradient,
    gradient_check,
)
from .logistic import Logistic
from .mlp import TinyMLP
from .quadratic import NoisyQuadratic

logger = logging.getLogger(__name__)

BUILTIN_OBJECTIVES: Dict[str, Type[BaseObjective]] = {
    "NoisyQuadratic": NoisyQuadratic,
    "Logistic": Logistic,
    "TinyMLP": TinyMLP,
}

DATASET_KINDS = ("Logistic", "TinyMLP")


@dataclass(frozen=True)
class ObjectiveSpec:
    """Objective section of a run config.

    ``dimension`` is the parameter dimension for NoisyQuadratic and Logistic
    and the input-feature count for TinyMLP (whose parameter count is
    hidden * (dimension + 2) + 1).
    """
    kind: str
    dimension: int
    M: float = 0.0
    C: float = 1.0
    data_seed: int = 0
    n_points: Optional[int] = None
    init_scale: float = 1.0
    hidden: int = 8


def build_objective(spec: ObjectiveSpec) -> BaseObjective:
    """Instantiate the objective named by spec.kind."""
    if spec.kind not in BUILTIN_OBJECTIVES:
        raise ValueError(
            f"Unknown objective kind: {spec.kind}\n"
            f"Available kinds: {list(BUILTIN_OBJECTIVES)}"
        )
    if spec.kind == "NoisyQuadratic":
        obj = NoisyQuadratic(spec.dimension, M=spec.M, C=spec.C, init_scale=spec.init_scale)
    elif spec.kind == "Logistic":
        obj = Logistic.synthetic(spec.n_points or 100, spec.dimension, data_seed=spec.data_seed)
    else:
        obj = TinyMLP.synthetic(
            spec.n_points or 100, spec.dimension, hidden=spec.hidden,
            data_seed=spec.data_seed, init_scale=spec.init_scale,
        )
    logger.debug("Built objective: %s", obj.describe())
    return obj


def evaluate_loss(obj: BaseObjective, x: ModelVector) -> float:
    return obj.evaluate_loss(x)


def full_gradient(obj: BaseObjective, x: ModelVector) -> ModelVector:
    return obj.full_gradient(x)


def stochastic_gradient(
    obj: BaseObjective, x: ModelVector, batch_size: int, rng: np.random.Generator
) -> ModelVector:
    return obj.stochastic_gradient(x, batch_size, rng)


__all__ = [
    "BaseObjective",
    "ModelVector",
    "DimensionMismatchError",
    "NonFiniteError",
    "NoisyQuadratic",
    "Logistic",
    "TinyMLP",
    "ObjectiveSpec",
    "BUILTIN_OBJECTIVES",
    "DATASET_KINDS",
    "build_objective",
    "evaluate_loss",
    "full_gradient",
    "stochastic_gradient",
    "finite_difference_gradient",
    "gradient_check",
]
