"""Concrete epsilon-sensitive distribution maps."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .core import (Box, ClosedFormUnavailable, ConfigurationError, PerformativeEnvironment,
                   ProblemConstants, Sample, validate_dims)
from .data import Dataset
from .losses import LinearQuadraticLoss, LinearSquaredLoss, RegularizedLogisticLoss, SquaredLoss


class GaussianEnv(PerformativeEnvironment):
    """Mean estimation with ``D(theta) = N(mu + epsilon * theta, sigma^2)``.

    Under the squared loss this has ``beta = gamma = L^2 = 1`` and the gradient-noise
    constant equals ``sigma^2``.  ``sigma = 0`` gives a point mass, which the
    unit tests use.
    """

    has_closed_form_G = True
    has_closed_form_stable_point = True
    has_closed_form_population_gradient = True
    param_dim = 1
    sample_dim = 1

    def __init__(self, mu: float = 10.0, sigma: float = 0.1, epsilon: float = 0.2):
        if sigma < 0:
            raise ConfigurationError("sigma must be >= 0")
        if not 0.0 <= epsilon < 1.0:
            raise ConfigurationError("epsilon must lie in [0, 1)")
        self.mu, self.sigma, self.epsilon = float(mu), float(sigma), float(epsilon)
        self.loss = SquaredLoss(1)
        self.constants = ProblemConstants(self.epsilon, 1.0, 1.0, self.sigma ** 2, 1.0)

    def __repr__(self):
        return f"GaussianEnv(mu={self.mu}, sigma={self.sigma}, epsilon={self.epsilon})"

    def draw_noise(self, rng, size):
        return rng.standard_normal(size)

    def realize(self, theta, noise):
        z = self.mu + self.epsilon * theta[..., 0] + self.sigma * noise
        return Sample(z[..., None])

    def default_theta1(self):
        return np.array([self.mu])

    def decoupled_minimizer(self, theta):
        return self.mu + self.epsilon * np.asarray(theta, dtype=np.float64)

    def stable_point(self):
        return np.array([self.mu / (1.0 - self.epsilon)])

    def exact_population_gradient(self, theta):
        return (1.0 - self.epsilon) * np.asarray(theta, dtype=np.float64) - self.mu


class EtaEnv(PerformativeEnvironment):
    """Travel-time prediction where the forecast itself changes congestion.

    ``x ~ Bernoulli(p)`` flags bad weather and the realized duration is
    ``y = mu + w x - epsilon (theta_1 x + theta_2 - mu)``.  The model is
    ``f(x) = theta_1 x + theta_2`` on the box ``[0, w] x [0, 2 mu]``.

    Declared constants: ``gamma`` is the smallest eigenvalue of ``E[u u^T]``
    with ``u = (x, 1)``, ``beta = 2`` bounds the per-sample Hessian ``u u^T``,
    ``sigma^2 = 0`` because ``y`` is linear in ``x`` so ``G(theta)`` fits every
    sample exactly, and ``L^2`` is the top eigenvalue of ``E[||u||^2 u u^T]``.
    """

    has_closed_form_G = True
    has_closed_form_stable_point = True
    has_closed_form_population_gradient = True
    param_dim = 2
    sample_dim = 1

    def __init__(self, p: float = 0.5, mu: float = 20.0, w: float = 4.0, epsilon: float = 0.25):
        if not 0.0 < p < 1.0:
            raise ConfigurationError("p must lie in (0, 1)")
        if mu <= 0 or w <= 0:
            raise ConfigurationError("mu and w must be > 0")
        if not 0.0 < epsilon < 1.0:
            raise ConfigurationError("epsilon must lie in (0, 1)")
        self.p, self.mu, self.w, self.epsilon = float(p), float(mu), float(w), float(epsilon)
        self.loss = LinearSquaredLoss(1)
        self.box = Box(np.array([0.0, 0.0]), np.array([self.w, 2.0 * self.mu]))
        second_moment = np.array([[p, p], [p, 1.0]])
        weighted = np.array([[2 * p, 2 * p], [2 * p, 2 * p + (1 - p)]])
        gamma = float(np.linalg.eigvalsh(second_moment)[0])
        L_sq = float(np.linalg.eigvalsh(weighted)[-1])
        self.constants = ProblemConstants(self.epsilon, 2.0, gamma, 0.0, L_sq)

    def __repr__(self):
        return f"EtaEnv(p={self.p}, mu={self.mu}, w={self.w}, epsilon={self.epsilon})"

    def draw_noise(self, rng, size):
        return (rng.random(size) < self.p).astype(np.float64)

    def realize(self, theta, noise):
        theta = np.asarray(theta)
        if not self.box.contains(theta):
            raise ConfigurationError(f"theta {theta} outside the parameter box")
        x = noise
        y = self.mu + self.w * x - self.epsilon * (theta[..., 0] * x + theta[..., 1] - self.mu)
        return Sample(x[..., None], y)

    def default_theta1(self):
        return np.array([self.w / 2.0, self.mu / 2.0])

    def decoupled_minimizer(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        slope = self.w - self.epsilon * theta[..., 0]
        intercept = self.mu * (1.0 + self.epsilon) - self.epsilon * theta[..., 1]
        return np.stack([slope, intercept], axis=-1)

    def stable_point(self):
        return np.array([self.w / (1.0 + self.epsilon), self.mu])

    def exact_population_gradient(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        y0 = self.mu - self.epsilon * (theta[1] - self.mu)
        y1 = self.mu + self.w - self.epsilon * (theta[0] + theta[1] - self.mu)
        r1 = theta[0] + theta[1] - y1
        r0 = theta[1] - y0
        return np.array([self.p * r1, self.p * r1 + (1 - self.p) * r0])


class PointMassEnv(PerformativeEnvironment):
    """``D(theta)`` is a point mass at ``1 + epsilon * theta``.

    Paired with ``l(z; theta) = -beta_c z theta + (gamma_c / 2) theta^2`` this
    is the counterexample on which repeated gradient descent diverges when
    ``gamma_c = 0`` or ``epsilon >= gamma_c / beta_c``.
    """

    has_closed_form_population_gradient = True
    param_dim = 1
    sample_dim = 1

    def __init__(self, epsilon: float = 1.0, beta_c: float = 1.0, gamma_c: float = 0.0):
        if epsilon < 0 or beta_c <= 0 or gamma_c < 0:
            raise ConfigurationError("need epsilon >= 0, beta_c > 0, gamma_c >= 0")
        self.epsilon, self.beta_c, self.gamma_c = float(epsilon), float(beta_c), float(gamma_c)
        self.loss = LinearQuadraticLoss(beta_c, gamma_c)
        # gradients are deterministic given theta, so the second-moment bound holds with sigma^2 = 0, L^2 = gamma_c^2
        # whenever G exists; for gamma_c = 0 there is no G and those constants are vacuous
        self.constants = ProblemConstants(self.epsilon, max(self.beta_c, self.gamma_c), self.gamma_c,
                                          0.0, self.gamma_c ** 2)

    def __repr__(self):
        return f"PointMassEnv(epsilon={self.epsilon}, beta_c={self.beta_c}, gamma_c={self.gamma_c})"

    @property
    def has_closed_form_G(self):
        return self.gamma_c > 0

    @property
    def has_closed_form_stable_point(self):
        return self.gamma_c > 0 and not np.isclose(self.epsilon * self.beta_c, self.gamma_c, rtol=0, atol=1e-15)

    def draw_noise(self, rng, size):
        return np.zeros(size)

    def realize(self, theta, noise):
        z = 1.0 + self.epsilon * np.asarray(theta)[..., 0] + noise
        return Sample(z[..., None])

    def default_theta1(self):
        return np.array([1.0])

    def decoupled_minimizer(self, theta):
        if not self.has_closed_form_G:
            raise ClosedFormUnavailable("gamma_c = 0: the decoupled risk is unbounded below")
        return self.beta_c * (1.0 + self.epsilon * np.asarray(theta, dtype=np.float64)) / self.gamma_c

    def stable_point(self):
        if not self.has_closed_form_stable_point:
            raise ClosedFormUnavailable("no stable point when gamma_c = 0 or epsilon = gamma_c / beta_c")
        ratio = self.beta_c / self.gamma_c
        return np.array([ratio / (1.0 - self.epsilon * ratio)])

    def exact_population_gradient(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        return -self.beta_c * (1.0 + self.epsilon * theta) + self.gamma_c * theta


def best_response(x, theta, epsilon: float, strategic_dims) -> np.ndarray:
    """Agents' feature choice under utility ``-theta.x'`` and cost ``||x' - x||^2 / (2 epsilon)``.

    The maximizer moves each strategic coordinate by ``-epsilon * theta_i``
    and leaves the rest untouched.  Broadcasts over leading axes of ``x`` and
    ``theta``.
    """
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    dims = np.asarray(strategic_dims, dtype=np.int64)
    shape = np.broadcast_shapes(x.shape, theta.shape)
    out = np.array(np.broadcast_to(x, shape))
    out[..., dims] -= epsilon * np.broadcast_to(theta, shape)[..., dims]
    return out


def agent_objective(x_new, x, theta, epsilon: float, strategic_dims=None) -> np.ndarray:
    """Utility minus cost, ``-theta.x' - ||x' - x||^2 / (2 epsilon)``."""
    x_new = np.asarray(x_new, dtype=np.float64)
    return -np.sum(theta * x_new, axis=-1) - np.sum((x_new - x) ** 2, axis=-1) / (2.0 * epsilon)


def compute_logistic_constants(features, lam: Optional[float] = None, epsilon: float = 0.0) -> ProblemConstants:
    """Constants of the l2-regularized logistic loss on standardized data.

    ``gamma = lam`` and ``beta = max(2, mean ||x_i||^2 / 4 + gamma)``.  ``lam``
    defaults to ``1000 / n``.  The second-moment constants are declared as
    ``L^2 = beta^2`` and ``sigma^2 = mean ||x_i||^2`` (the latter bounds the
    unregularized gradient since ``|p - y| <= 1``).
    """
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    gamma = 1e3 / n if lam is None else float(lam)
    mean_sq = float(np.mean(np.sum(x ** 2, axis=1)))
    beta = max(2.0, mean_sq / 4.0 + gamma)
    return ProblemConstants(float(epsilon), beta, gamma, mean_sq, beta ** 2)


class StrategicEnv(PerformativeEnvironment):
    """Credit scoring where applicants best-respond to the deployed classifier.

    ``D(theta)``: draw a row uniformly from ``data`` and shift its strategic
    coordinates by ``-epsilon * theta``; the label is untouched.  The empirical
    distribution is treated as the true base distribution, so the population
    gradient is an exact average over the rows.

    ``strategic_dims`` are 0-based by default; pass ``index_base=1`` to read
    them as 1-based.
    """

    has_closed_form_population_gradient = True

    def __init__(self, data: Dataset, epsilon: float, strategic_dims: Sequence[int] = (1, 6, 8),
                 lam: Optional[float] = None, index_base: int = 0):
        if data.n == 0:
            raise ConfigurationError("StrategicEnv needs a nonempty dataset")
        if epsilon <= 0:
            raise ConfigurationError("epsilon must be > 0")
        self.data = data
        self.epsilon = float(epsilon)
        self.strategic_dims = validate_dims(strategic_dims, data.d, index_base)
        self.lam = data.default_lambda if lam is None else float(lam)
        self.param_dim = data.d
        self.sample_dim = data.d
        self.loss = RegularizedLogisticLoss(data.d, self.lam)
        self.constants = compute_logistic_constants(data.features, self.lam, self.epsilon)

    def __repr__(self):
        return (f"StrategicEnv(n={self.data.n}, d={self.data.d}, epsilon={self.epsilon}, "
                f"dims={self.strategic_dims.tolist()}, lam={self.lam})")

    def draw_noise(self, rng, size):
        return rng.integers(0, self.data.n, size=size)

    def realize(self, theta, noise):
        x = best_response(self.data.features[noise], theta, self.epsilon, self.strategic_dims)
        return Sample(x, self.data.labels[noise])

    def induced_dataset(self, theta) -> Sample:
        """Every row of the base data, best-responded to ``theta``."""
        theta = self.check_param(theta)
        return Sample(best_response(self.data.features, theta, self.epsilon, self.strategic_dims),
                      self.data.labels)

    def exact_population_gradient(self, theta):
        theta = self.check_param(theta)
        return self.loss.grad(self.induced_dataset(theta), theta).mean(axis=0)

    def exact_performative_risk(self, theta) -> float:
        theta = self.check_param(theta)
        return float(np.mean(self.loss.value(self.induced_dataset(theta), theta)))


def closed_form_stable_point(env: PerformativeEnvironment) -> np.ndarray:
    """Exact stable point, or :class:`ClosedFormUnavailable`."""
    return env.stable_point()
