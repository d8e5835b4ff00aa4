"""One-hidden-layer tanh network with squared loss (smallest nonconvex case)."""
from typing import Optional, Tuple

import numpy as np

from .base import BaseObjective, ModelVector

MAX_HIDDEN = 32


def make_regression(n_points: int, features: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    inputs = rng.standard_normal((n_points, features))
    teacher_w = rng.standard_normal(features) / np.sqrt(features)
    targets = np.sin(2.0 * inputs @ teacher_w) + 0.1 * rng.standard_normal(n_points)
    return inputs, targets


class TinyMLP(BaseObjective):
    """F(x) = (1/N) sum_i 1/2 (v . tanh(W a_i + b) + c - t_i)^2.

    The parameter vector packs W (hidden x features, row-major), b, v, c.
    """

    kind = "TinyMLP"
    f_inf = 0.0

    def __init__(
        self,
        inputs: np.ndarray,
        targets: np.ndarray,
        hidden: int = 8,
        data_seed: Optional[int] = None,
        init_scale: float = 1.0,
    ):
        inputs = np.asarray(inputs, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        if inputs.ndim != 2 or targets.shape != (inputs.shape[0],):
            raise ValueError("inputs must be (N, p) and targets (N,)")
        if not 1 <= hidden <= MAX_HIDDEN:
            raise ValueError(f"hidden must be in [1, {MAX_HIDDEN}], got {hidden}")
        self.inputs = inputs
        self.targets = targets
        self.hidden = int(hidden)
        self.data_seed = data_seed
        self.init_scale = float(init_scale)

    @classmethod
    def synthetic(cls, n_points: int, features: int, hidden: int = 8, data_seed: int = 0,
                  init_scale: float = 1.0) -> "TinyMLP":
        inputs, targets = make_regression(n_points, features, data_seed)
        return cls(inputs, targets, hidden=hidden, data_seed=data_seed, init_scale=init_scale)

    @property
    def features(self) -> int:
        return int(self.inputs.shape[1])

    @property
    def dimension(self) -> int:
        return self.hidden * (self.features + 2) + 1

    @property
    def n_points(self) -> int:
        return int(self.inputs.shape[0])

    def _unpack(self, w: np.ndarray):
        h, p = self.hidden, self.features
        W = w[: h * p].reshape(h, p)
        b = w[h * p: h * p + h]
        v = w[h * p + h: h * p + 2 * h]
        c = w[-1]
        return W, b, v, c

    def _forward(self, w: np.ndarray, idx=None):
        a = self.inputs if idx is None else self.inputs[idx]
        t = self.targets if idx is None else self.targets[idx]
        W, b, v, c = self._unpack(w)
        act = np.tanh(a @ W.T + b)
        err = act @ v + c - t
        return a, act, err

    def _loss(self, w: np.ndarray) -> float:
        _, _, err = self._forward(w)
        return float(0.5 * np.mean(err ** 2))

    def _grad_on(self, w: np.ndarray, idx=None) -> np.ndarray:
        a, act, err = self._forward(w, idx)
        n = a.shape[0]
        _, _, v, _ = self._unpack(w)
        dz = (err[:, None] * v[None, :]) * (1.0 - act ** 2)
        gW = dz.T @ a / n
        gb = dz.sum(axis=0) / n
        gv = act.T @ err / n
        gc = err.sum() / n
        return np.concatenate([gW.ravel(), gb, gv, [gc]])

    def _gradient(self, w: np.ndarray) -> np.ndarray:
        return self._grad_on(w)

    def _sample_gradient(self, w: np.ndarray, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(self.n_points, size=batch_size, replace=False)
        return self._grad_on(w, idx)

    def initial_point(self) -> ModelVector:
        seed = 0 if self.data_seed is None else self.data_seed
        rng = np.random.default_rng([seed, 7])
        return ModelVector(0.5 * self.init_scale * rng.standard_normal(self.dimension))

    def describe(self) -> dict:
        info = super().describe()
        info.update({"hidden": self.hidden, "features": self.features, "data_seed": self.data_seed})
        return info
