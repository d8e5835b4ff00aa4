"""Noisy quadratic F(x) = 1/2 ||x||^2 with a synthetic gradient-noise oracle."""
import numpy as np

from .base import BaseObjective, ModelVector


class NoisyQuadratic(BaseObjective):
    """Isotropic quadratic whose stochastic gradient is grad F(x) + zeta.

    zeta ~ N(0, sigma^2 I) with sigma^2 = (M ||grad F(x)||^2 + C) / (d * batch_size),
    so E||zeta||^2 = (M ||grad F||^2 + C) / batch_size holds with equality.
    """

    kind = "NoisyQuadratic"
    f_inf = 0.0
    lipschitz = 1.0

    def __init__(self, dimension: int, M: float = 0.0, C: float = 1.0, init_scale: float = 1.0):
        if dimension < 1:
            raise ValueError(f"dimension must be positive, got {dimension}")
        if M < 0 or C < 0:
            raise ValueError(f"noise constants must be nonnegative (M={M}, C={C})")
        self._dimension = int(dimension)
        self.M = float(M)
        self.C = float(C)
        self.init_scale = float(init_scale)

    @property
    def dimension(self) -> int:
        return self._dimension

    def _loss(self, w: np.ndarray) -> float:
        return 0.5 * float(w @ w)

    def _gradient(self, w: np.ndarray) -> np.ndarray:
        return w.copy()

    def noise_variance(self, w: np.ndarray, batch_size: int = 1) -> float:
        """Total noise variance E||zeta||^2 at w."""
        return (self.M * float(w @ w) + self.C) / batch_size

    def _sample_gradient(self, w: np.ndarray, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        var = self.noise_variance(w, batch_size)
        if var == 0.0:
            return w.copy()
        sigma = np.sqrt(var / self._dimension)
        return w + sigma * rng.standard_normal(self._dimension)

    def initial_point(self) -> ModelVector:
        return ModelVector(np.full(self._dimension, self.init_scale))

    def describe(self) -> dict:
        info = super().describe()
        info.update({"M": self.M, "C": self.C, "init_scale": self.init_scale})
        return info
