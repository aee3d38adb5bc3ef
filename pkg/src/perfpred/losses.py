"""Built-in per-sample losses.  All broadcast over leading batch axes."""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from .core import LossModel, Sample


class SquaredLoss(LossModel):
    """``l(z; theta) = 0.5 * ||z - theta||^2`` (mean estimation)."""

    def __init__(self, dim: int = 1):
        self.param_dim = dim

    def value(self, z: Sample, theta):
        return 0.5 * np.sum((z.features - theta) ** 2, axis=-1)

    def grad(self, z: Sample, theta):
        return theta - z.features


class LinearSquaredLoss(LossModel):
    """``l((x, y); theta) = 0.5 * (y - theta[:-1] . x - theta[-1])^2``.

    The last parameter is the intercept.
    """

    def __init__(self, feature_dim: int = 1):
        self.param_dim = feature_dim + 1

    def residual(self, z: Sample, theta):
        return z.label - np.sum(z.features * theta[..., :-1], axis=-1) - theta[..., -1]

    def value(self, z, theta):
        return 0.5 * self.residual(z, theta) ** 2

    def grad(self, z, theta):
        r = self.residual(z, theta)[..., None]
        ones = np.ones(z.features.shape[:-1] + (1,))
        return -r * np.concatenate([z.features, ones], axis=-1)


class LinearQuadraticLoss(LossModel):
    """``l(z; theta) = -b * z * theta + (g / 2) * theta^2``, scalar theta.

    Convex but not strongly convex when ``g == 0``.
    """

    param_dim = 1

    def __init__(self, b: float, g: float):
        self.b = float(b)
        self.g = float(g)

    def value(self, z, theta):
        t = theta[..., 0]
        return -self.b * z.features[..., 0] * t + 0.5 * self.g * t ** 2

    def grad(self, z, theta):
        return -self.b * z.features + self.g * theta


class RegularizedLogisticLoss(LossModel):
    """``log(1 + exp(x.theta)) - y * x.theta + (lam / 2) * ||theta||^2``."""

    def __init__(self, dim: int, lam: float):
        self.param_dim = dim
        self.lam = float(lam)

    def value(self, z, theta):
        s = np.sum(z.features * theta, axis=-1)
        return np.logaddexp(0.0, s) - z.label * s + 0.5 * self.lam * np.sum(theta ** 2, axis=-1)

    def grad(self, z, theta):
        s = np.sum(z.features * theta, axis=-1)
        return z.features * (expit(s) - z.label)[..., None] + self.lam * theta

    def smoothness(self, features) -> float:
        """Upper bound on the Hessian norm of the average loss over ``features``."""
        return float(np.mean(np.sum(features ** 2, axis=1)) / 4.0 + self.lam)
