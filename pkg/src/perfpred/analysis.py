"""Theoretical bounds, Wasserstein sensitivity checks and confidence bands."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import ConfigurationError, PerformativeEnvironment, ProblemConstants, RegimeError, as_param

Z_90 = 1.645


@dataclass(frozen=True)
class BoundParams:
    constants: ProblemConstants
    M_greedy: float
    c_lazy: float
    M_lazy: float
    alpha0: float
    n0: float
    alpha: float
    theta1_dist_sq: float

    @classmethod
    def from_constants(cls, constants: ProblemConstants, theta1_dist_sq: float, n0: float = 1.0,
                       alpha: float = 1.0, alpha0: float = 0.5) -> "BoundParams":
        M_greedy = max(2.0 * constants.sigma_sq, 8.0 * constants.L_sq * theta1_dist_sq)
        c = lazy_contraction_constant(constants, n0, alpha0)
        if c < 1 and constants.gamma > 0:
            sigma = math.sqrt(constants.sigma_sq)
            M_lazy = 3.0 * (sigma + constants.gamma) ** 2 / (constants.gamma ** 2 * (1.0 - c))
        else:
            M_lazy = math.inf
        return cls(constants, M_greedy, c, M_lazy, alpha0, n0, alpha, theta1_dist_sq)

    @property
    def lazy_valid(self) -> bool:
        return self.c_lazy < 1.0


def greedy_bound(k, params: BoundParams):
    """Greedy-deploy bound on ``E||theta_{k+1} - theta_PS||^2``:
    ``M_greedy / ((gamma - eps beta)^2 k + 8 L^2)``."""
    c = params.constants
    if not c.in_convergence_regime:
        raise RegimeError(f"greedy bound needs epsilon < gamma/beta (epsilon={c.epsilon}, gamma/beta={c.ratio:.6g})")
    k = np.asarray(k, dtype=np.float64)
    out = params.M_greedy / (c.effective_convexity ** 2 * k + 8.0 * c.L_sq)
    return float(out) if out.ndim == 0 else out


def lazy_contraction_constant(constants: ProblemConstants, n0: float, alpha0: float) -> float:
    r"""Per-deployment contraction factor of lazy deploy with ``n(k) >= n0 k^alpha``:

    .. math::
        c = \frac{32 L^2}{\gamma^2 n_0} + \frac{24 \epsilon\beta L}{\gamma^2 \sqrt{n_0}}
            + \frac{1.1 \sigma\epsilon\beta}{\gamma^2 n_0^{1-\alpha_0}} + (\epsilon\beta/\gamma)^2
    """
    if n0 < 1:
        raise ConfigurationError("n0 must be >= 1")
    if not 0.0 < alpha0 < 1.0:
        raise ConfigurationError("alpha0 must lie in (0, 1)")
    eps, beta, g = constants.epsilon, constants.beta, constants.gamma
    if g <= 0:
        return math.inf
    L, sigma = math.sqrt(constants.L_sq), math.sqrt(constants.sigma_sq)
    g2 = g * g
    return (32.0 * constants.L_sq / (g2 * n0)
            + 24.0 * eps * beta * L / (g2 * math.sqrt(n0))
            + 1.1 * sigma * eps * beta / (g2 * n0 ** (1.0 - alpha0))
            + (eps * beta / g) ** 2)


def lazy_recursion_bound(k: int, params: BoundParams, k0: Optional[float] = None) -> float:
    """Lazy-deploy bound after ``k`` deployments from the unrolled per-round recursion.

    ``c^k ||theta_1 - theta_PS||^2 + gamma^-2 sum_j c^{k-j} (1.2 sigma^2 / (n(j)+k0)
    + 1.1 sigma eps beta / (n(j)+k0)^alpha0)`` with ``n(j) = n0 j^alpha`` and
    ``k0 = 8 L^2 / gamma^2``.  Only meaningful when ``c < 1``.
    """
    c = params.constants
    if not params.lazy_valid:
        raise RegimeError(f"lazy contraction constant c={params.c_lazy:.4g} >= 1; increase n0")
    k0 = 8.0 * c.L_sq / c.gamma ** 2 if k0 is None else k0
    sigma = math.sqrt(c.sigma_sq)
    j = np.arange(1, k + 1, dtype=np.float64)
    m = params.n0 * j ** params.alpha + k0
    terms = 1.2 * c.sigma_sq / m + 1.1 * sigma * c.epsilon * c.beta / m ** params.alpha0
    weights = params.c_lazy ** (k - j)
    return float(params.c_lazy ** k * params.theta1_dist_sq + np.sum(weights * terms) / c.gamma ** 2)


def greedy_one_step_bound(dist_sq, eta, constants: ProblemConstants):
    """One-step greedy recursion: ``(1 - 2 eta (gamma - eps beta) + eta^2 L^2 (1 + eps beta/gamma)^2) d + eta^2 sigma^2``."""
    c = constants
    factor = 1.0 - 2.0 * eta * c.effective_convexity + eta ** 2 * c.L_sq * (1.0 + c.epsilon * c.beta / c.gamma) ** 2
    return factor * dist_sq + eta ** 2 * c.sigma_sq


def offline_one_step_bound(dist_sq, eta, constants: ProblemConstants):
    """One inner step on a fixed distribution: ``(1 - 2 eta gamma + eta^2 L^2) d + eta^2 sigma^2``."""
    c = constants
    return (1.0 - 2.0 * eta * c.gamma + eta ** 2 * c.L_sq) * dist_sq + eta ** 2 * c.sigma_sq


def rgd_contraction_bound(constants: ProblemConstants, eta: Optional[float] = None) -> float:
    """Distance contraction factor ``1 - eta (gamma - eps beta) / 2`` for RGD.

    ``eta`` defaults to ``(gamma - eps beta) / (2 (1 + eps^2) beta^2)``.
    """
    if not constants.in_convergence_regime:
        raise RegimeError("RGD contraction needs epsilon < gamma/beta")
    if eta is None:
        eta = rgd_step_size(constants)
    return 1.0 - eta * constants.effective_convexity / 2.0


def rgd_step_size(constants: ProblemConstants) -> float:
    c = constants
    return c.effective_convexity / (2.0 * (1.0 + c.epsilon ** 2) * c.beta ** 2)


def empirical_w1_1d(samples_a, samples_b) -> float:
    """Exact W1 between two equal-size empirical measures on the line.

    Equals the mean absolute difference of matched order statistics.
    """
    a = np.sort(np.asarray(samples_a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(samples_b, dtype=np.float64).ravel())
    if a.size != b.size:
        raise ValueError(f"sample counts differ ({a.size} vs {b.size}); resample to equal size first")
    if a.size == 0:
        raise ValueError("need at least one sample")
    return float(np.mean(np.abs(a - b)))


def bootstrap_se(samples_a, samples_b, rng: np.random.Generator, n_boot: int = 100) -> float:
    """Bootstrap standard error of :func:`empirical_w1_1d`, resampling both sets."""
    a = np.asarray(samples_a, dtype=np.float64).ravel()
    b = np.asarray(samples_b, dtype=np.float64).ravel()
    n = a.size
    reps = np.empty(n_boot)
    for i in range(n_boot):
        reps[i] = empirical_w1_1d(a[rng.integers(0, n, n)], b[rng.integers(0, n, n)])
    return float(reps.std(ddof=1))


@dataclass(frozen=True)
class AuditRow:
    theta: tuple
    theta_prime: tuple
    w1: float
    bound: float
    se: float
    ratio: float
    passed: bool

    def as_dict(self) -> dict:
        return {"theta": " ".join(f"{v:.17g}" for v in self.theta),
                "theta_prime": " ".join(f"{v:.17g}" for v in self.theta_prime),
                "w1": self.w1, "bound": self.bound, "se": self.se, "ratio": self.ratio,
                "passed": self.passed}


def sensitivity_audit(env: PerformativeEnvironment, theta_pairs: Sequence, n_samples: int,
                      rng: np.random.Generator, *, coordinate: int = 0,
                      projection: Optional[Callable] = None, paired: bool = False,
                      n_boot: int = 100, n_se: float = 3.0, abs_tol: float = 1e-12) -> list:
    """Check ``W1(D(theta), D(theta')) <= eps ||theta - theta'||`` pair by pair.

    Samples are reduced to one dimension with ``projection(sample)`` (default:
    feature ``coordinate``).  Since a 1-Lipschitz projection cannot increase
    W1, the projected distance is a valid lower bound on the full one.  With
    ``paired=True`` both sides reuse the same base randomness, which makes the
    shift of a best-responded coordinate exact.  A pair passes when
    ``w1 <= bound + n_se * se + abs_tol``.
    """
    eps = env.constants.epsilon
    proj = projection or (lambda z: z.features[..., coordinate])
    rows = []
    for theta, theta_p in theta_pairs:
        theta = as_param(theta, env.param_dim)
        theta_p = as_param(theta_p, env.param_dim)
        if paired:
            noise = env.draw_noise(rng, n_samples)
            a = proj(env.realize(theta, noise))
            b = proj(env.realize(theta_p, noise))
        else:
            a = proj(env.sample(theta, rng, n_samples))
            b = proj(env.sample(theta_p, rng, n_samples))
        w1 = empirical_w1_1d(a, b)
        bound = eps * float(np.linalg.norm(theta - theta_p))
        se = 0.0 if paired else bootstrap_se(a, b, rng, n_boot)
        ratio = w1 / bound if bound > 0 else math.nan
        rows.append(AuditRow(tuple(theta), tuple(theta_p), w1, bound, se, ratio,
                             bool(w1 <= bound + n_se * se + abs_tol)))
    return rows


def confidence_band(traces, z: float = Z_90):
    """Pointwise mean and ``mean +/- z s / sqrt(n)`` over runs (rows of ``traces``)."""
    traces = np.asarray(traces, dtype=np.float64)
    if traces.ndim != 2 or traces.shape[0] < 2:
        raise ValueError("confidence_band needs at least 2 traces of equal length")
    n = traces.shape[0]
    mean = traces.mean(axis=0)
    half = z * traces.std(axis=0, ddof=1) / math.sqrt(n)
    return mean, mean - half, mean + half


def first_crossing(values, threshold: float) -> Optional[int]:
    """Index of the first entry ``<= threshold``, or ``None``."""
    hit = np.flatnonzero(np.asarray(values) <= threshold)
    return int(hit[0]) if hit.size else None
