"""Base objective interface and the model-parameter vector type."""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Iterable, Optional, Union

import numpy as np

logger = logging.getLogger(__name__)


class DimensionMismatchError(ValueError):
    """Raised when a vector does not match the objective's dimension."""


class NonFiniteError(ValueError):
    """Raised when a model vector would contain NaN or Inf."""


@dataclass(frozen=True, eq=False)
class ModelVector:
    """Dense, finite, read-only parameter vector x in R^d."""
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 1:
            raise ValueError(f"ModelVector must be 1-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("ModelVector entries must be finite (got NaN/Inf)")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def of(cls, values: Union["ModelVector", Iterable[float], np.ndarray]) -> "ModelVector":
        if isinstance(values, ModelVector):
            return values
        return cls(np.asarray(values, dtype=np.float64))

    @classmethod
    def zeros(cls, dimension: int) -> "ModelVector":
        return cls(np.zeros(dimension))

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])

    def __len__(self) -> int:
        return self.dimension

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelVector):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"ModelVector(d={self.dimension}, values={np.array2string(self.values, precision=4)})"


class BaseObjective(ABC):
    """All objectives implement this interface.

    Subclasses provide the loss, its exact gradient and a sampler for the
    stochastic gradient; dimension checks and ModelVector wrapping live here.
    """

    #: lower bound F_inf of the loss
    f_inf: float = 0.0
    #: Lipschitz constant of the gradient when known in closed form
    lipschitz: Optional[float] = None

    @property
    @abstractmethod
    def kind(self) -> str:
        """Objective kind name used in config files."""
        ...

    @property
    @abstractmethod
    def dimension(self) -> int:
        ...

    @property
    def n_points(self) -> Optional[int]:
        """Dataset size N, or None for synthetic-noise objectives."""
        return None

    @abstractmethod
    def _loss(self, w: np.ndarray) -> float:
        ...

    @abstractmethod
    def _gradient(self, w: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def _sample_gradient(self, w: np.ndarray, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        ...

    @abstractmethod
    def initial_point(self) -> ModelVector:
        """Common starting point x_1 shared by all workers."""
        ...

    def _check(self, x: ModelVector) -> np.ndarray:
        x = ModelVector.of(x)
        if x.dimension != self.dimension:
            raise DimensionMismatchError(
                f"{self.kind}: expected dimension {self.dimension}, got {x.dimension}"
            )
        return x.values

    def evaluate_loss(self, x: ModelVector) -> float:
        return float(self._loss(self._check(x)))

    def full_gradient(self, x: ModelVector) -> ModelVector:
        return ModelVector(self._gradient(self._check(x)))

    def stochastic_gradient(
        self, x: ModelVector, batch_size: int, rng: np.random.Generator
    ) -> ModelVector:
        if batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {batch_size}")
        n = self.n_points
        if n is not None and batch_size > n:
            raise ValueError(f"batch_size {batch_size} exceeds dataset size N={n}")
        return ModelVector(self._sample_gradient(self._check(x), batch_size, rng))

    def grad_norm_sq(self, x: ModelVector) -> float:
        g = self._gradient(self._check(x))
        return float(g @ g)

    def describe(self) -> dict:
        return {"kind": self.kind, "dimension": self.dimension, "n_points": self.n_points}


def finite_difference_gradient(obj: BaseObjective, x: ModelVector, rel_step: float = 1e-6) -> ModelVector:
    """Centered finite-difference gradient with step rel_step * (1 + |x_i|)."""
    w = obj._check(x)
    grad = np.zeros_like(w)
    for j in range(w.shape[0]):
        h = rel_step * (1.0 + abs(w[j]))
        plus = w.copy()
        plus[j] += h
        minus = w.copy()
        minus[j] -= h
        grad[j] = (obj._loss(plus) - obj._loss(minus)) / (2.0 * h)
    return ModelVector(grad)


def gradient_check(obj: BaseObjective, x: ModelVector, rel_step: float = 1e-6) -> float:
    """Relative error between the analytic and finite-difference gradients."""
    analytic = obj.full_gradient(x).values
    numeric = finite_difference_gradient(obj, x, rel_step).values
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    err = float(np.linalg.norm(analytic - numeric) / scale)
    logger.debug("gradient_check %s: rel_err=%.3e", obj.kind, err)
    return err
