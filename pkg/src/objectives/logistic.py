"""Binary logistic regression on a synthetic two-cluster dataset."""
from typing import Optional

import numpy as np
from scipy.special import expit

from .base import BaseObjective, ModelVector


def make_clusters(n_points: int, dimension: int, seed: int, separation: float = 1.0):
    """Two Gaussian clusters centred at +/- mu with balanced +/-1 labels."""
    rng = np.random.default_rng(seed)
    labels = np.where(np.arange(n_points) % 2 == 0, 1.0, -1.0)
    mu = np.full(dimension, separation / np.sqrt(dimension))
    features = labels[:, None] * mu[None, :] + rng.standard_normal((n_points, dimension))
    return features, labels


class Logistic(BaseObjective):
    """F(x) = (1/N) sum_i log(1 + exp(-y_i <a_i, x>)), labels in {-1, +1}."""

    kind = "Logistic"
    f_inf = 0.0

    def __init__(
        self,
        features: np.ndarray,
        labels: np.ndarray,
        data_seed: Optional[int] = None,
    ):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.float64)
        if features.ndim != 2 or labels.shape != (features.shape[0],):
            raise ValueError("features must be (N, d) and labels (N,)")
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        self.features = features
        self.labels = labels
        self.data_seed = data_seed
        # ||grad^2 f_i|| <= ||a_i||^2 / 4
        self.lipschitz = float(np.mean(np.sum(features ** 2, axis=1)) / 4.0)

    @classmethod
    def synthetic(cls, n_points: int, dimension: int, data_seed: int = 0) -> "Logistic":
        features, labels = make_clusters(n_points, dimension, data_seed)
        return cls(features, labels, data_seed=data_seed)

    @property
    def dimension(self) -> int:
        return int(self.features.shape[1])

    @property
    def n_points(self) -> int:
        return int(self.features.shape[0])

    def _margins(self, w: np.ndarray, idx=None) -> np.ndarray:
        a = self.features if idx is None else self.features[idx]
        y = self.labels if idx is None else self.labels[idx]
        return y * (a @ w)

    def _loss(self, w: np.ndarray) -> float:
        return float(np.mean(np.logaddexp(0.0, -self._margins(w))))

    def _grad_on(self, w: np.ndarray, idx=None) -> np.ndarray:
        a = self.features if idx is None else self.features[idx]
        y = self.labels if idx is None else self.labels[idx]
        coef = -y * expit(-(y * (a @ w)))
        return (coef @ a) / a.shape[0]

    def _gradient(self, w: np.ndarray) -> np.ndarray:
        return self._grad_on(w)

    def _sample_gradient(self, w: np.ndarray, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(self.n_points, size=batch_size, replace=False)
        return self._grad_on(w, idx)

    def initial_point(self) -> ModelVector:
        return ModelVector.zeros(self.dimension)

    def describe(self) -> dict:
        info = super().describe()
        info["data_seed"] = self.data_seed
        return info
