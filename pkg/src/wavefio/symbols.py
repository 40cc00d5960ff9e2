"""Velocity models and the half-wave principal symbol p(y, eta) = c(y)|eta|."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LensModel:
    """Gaussian low-velocity lens c(x) = c0 + kappa * exp(-|x - xc|^2 / sigma^2).

    kappa = 0 gives a constant medium.  Units: km, s, km/s.
    """

    c0: float = 2.0
    kappa: float = 0.0
    sigma: float = 3.0
    xc: tuple[float, float] = (0.0, 14.0)

    def __post_init__(self):
        if self.c0 + min(0.0, self.kappa) <= 0:
            raise ValueError("velocity must stay positive")

    def _bump(self, x):
        d = x - np.asarray(self.xc)
        return np.exp(-np.sum(d**2, axis=-1) / self.sigma**2), d

    def c(self, x: np.ndarray) -> np.ndarray:
        """Velocity at points x, shape (..., 2) -> (...)."""
        g, _ = self._bump(np.asarray(x, dtype=float))
        return self.c0 + self.kappa * g

    def grad_c(self, x: np.ndarray) -> np.ndarray:
        g, d = self._bump(np.asarray(x, dtype=float))
        return self.kappa * g[..., None] * (-2.0 / self.sigma**2) * d

    def hess_c(self, x: np.ndarray) -> np.ndarray:
        """Hessian of c, shape (..., 2, 2)."""
        x = np.asarray(x, dtype=float)
        g, d = self._bump(x)
        s2 = self.sigma**2
        outer = d[..., :, None] * d[..., None, :]
        eye = np.eye(2).reshape((1,) * (x.ndim - 1) + (2, 2))
        return self.kappa * g[..., None, None] * (4.0 * outer / s2**2 - 2.0 * eye / s2)

    def p(self, y: np.ndarray, eta: np.ndarray) -> np.ndarray:
        """Principal symbol c(y)|eta|, homogeneous of degree 1 in eta."""
        return self.c(y) * np.linalg.norm(eta, axis=-1)

    def max_speed(self) -> float:
        return self.c0 + max(0.0, self.kappa)
