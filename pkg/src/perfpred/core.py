"""Domain types shared by every other module.

Parameters are plain 1-D ``float64`` numpy arrays; a batch of replicate runs is
stacked along a leading axis, shape ``(R, d)``.  Environments and losses
broadcast over that leading axis so the optimizers can advance many
independent runs in lockstep.
"""
from __future__ import annotations

import abc
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DIVERGENCE_THRESHOLD = 1e12


class ConfigurationError(ValueError):
    """Invalid parameters for an environment, schedule or experiment."""


class DimensionError(ValueError):
    pass


class RegimeError(ValueError):
    """Raised when a theorem-backed formula is used with epsilon >= gamma/beta."""


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float = math.nan):
        super().__init__(message)
        self.residual = residual


class ClosedFormUnavailable(NotImplementedError):
    pass


def as_param(values, dim: Optional[int] = None) -> np.ndarray:
    """Coerce ``values`` to a finite 1-D float64 parameter vector."""
    theta = np.array(values, dtype=np.float64, ndmin=1)
    if theta.ndim != 1:
        raise DimensionError(f"parameter vector must be 1-D, got shape {theta.shape}")
    if dim is not None and theta.shape[0] != dim:
        raise DimensionError(f"expected dimension {dim}, got {theta.shape[0]}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameter vector has non-finite entries")
    return theta


def run_rng(base_seed: int, run_id: int, stream: int = 0) -> np.random.Generator:
    """Independent PCG64 substream for replicate ``run_id``.

    The stream is seeded by ``SeedSequence(base_seed, spawn_key=(run_id,))``,
    which is exactly what ``SeedSequence(base_seed).spawn(...)[run_id]`` yields.
    A nonzero ``stream`` appends a second key for auxiliary draws.  Normal
    variates come from numpy's ziggurat sampler on that stream.
    """
    key = (int(run_id),) if stream == 0 else (int(run_id), int(stream))
    seq = np.random.SeedSequence(int(base_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True)
class Sample:
    """A draw ``z`` from an environment.

    ``features`` has the environment's sample dimension as its last axis;
    ``label`` is ``None`` for unsupervised samples (e.g. mean estimation).
    Both may carry leading batch axes.
    """

    features: np.ndarray
    label: Optional[np.ndarray] = None

    def __getitem__(self, idx) -> "Sample":
        label = None if self.label is None else self.label[idx]
        return Sample(self.features[idx], label)


@dataclass(frozen=True)
class ProblemConstants:
    """Sensitivity, smoothness, strong convexity and second-moment constants.

    ``sigma_sq`` and ``L_sq`` bound ``E||grad l(z; theta')||^2`` by
    ``sigma_sq + L_sq * ||theta' - G(theta)||^2`` for ``z ~ D(theta)``.
    """

    epsilon: float
    beta: float
    gamma: float
    sigma_sq: float = 0.0
    L_sq: float = 1.0

    def __post_init__(self):
        for name in ("epsilon", "beta", "gamma", "sigma_sq", "L_sq"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigurationError(f"{name} must be finite and >= 0, got {value}")
        if self.beta <= 0:
            raise ConfigurationError("beta must be > 0")
        if self.gamma > 0 and self.beta < self.gamma:
            raise ConfigurationError(f"beta ({self.beta}) must be >= gamma ({self.gamma})")

    @property
    def ratio(self) -> float:
        """gamma / beta, the inverse condition number."""
        return self.gamma / self.beta

    @property
    def effective_convexity(self) -> float:
        return self.gamma - self.epsilon * self.beta

    @property
    def in_convergence_regime(self) -> bool:
        return self.gamma > 0 and self.epsilon < self.gamma / self.beta

    def with_epsilon(self, epsilon: float) -> "ProblemConstants":
        return ProblemConstants(epsilon, self.beta, self.gamma, self.sigma_sq, self.L_sq)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``lower <= theta <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigurationError("box bounds must be 1-D arrays of equal length")
        if np.any(lo > hi):
            raise ConfigurationError(f"empty box: lower {lo} exceeds upper {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def contains(self, theta) -> bool:
        theta = np.asarray(theta)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))


def project(theta, box: Optional[Box] = None) -> np.ndarray:
    """Euclidean projection onto ``box`` (a per-coordinate clamp)."""
    theta = np.asarray(theta, dtype=np.float64)
    if box is None:
        return theta
    if theta.shape[-1] != box.lower.shape[0]:
        raise DimensionError(f"box has dimension {box.lower.shape[0]}, theta has {theta.shape[-1]}")
    return np.clip(theta, box.lower, box.upper)


class LossModel(abc.ABC):
    """Per-sample loss ``l(z; theta)`` and its gradient in ``theta``."""

    param_dim: Optional[int] = None

    @abc.abstractmethod
    def value(self, z: Sample, theta: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def grad(self, z: Sample, theta: np.ndarray) -> np.ndarray: ...


def loss_grad(loss: LossModel, z: Sample, theta) -> np.ndarray:
    """Gradient of ``loss`` at ``theta`` for sample ``z``, with dimension checks."""
    theta = np.asarray(theta, dtype=np.float64)
    if loss.param_dim is not None and theta.shape[-1] != loss.param_dim:
        raise DimensionError(f"loss expects dimension {loss.param_dim}, theta has {theta.shape[-1]}")
    g = loss.grad(z, theta)
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite gradient")
    return g


class PerformativeEnvironment(abc.ABC):
    """A distribution map ``theta -> D(theta)`` bundled with its loss.

    Sampling is split in two so runs can be batched: :meth:`draw_noise` pulls
    the theta-independent randomness from the generator, :meth:`realize` maps
    it through the deployed parameters.  ``sample`` composes the two, so the
    same theta and generator state always give the same draw.
    """

    constants: ProblemConstants
    loss: LossModel
    param_dim: int
    sample_dim: int
    box: Optional[Box] = None

    has_closed_form_G = False
    has_closed_form_stable_point = False
    has_closed_form_population_gradient = False

    @abc.abstractmethod
    def draw_noise(self, rng: np.random.Generator, size: int) -> np.ndarray: ...

    @abc.abstractmethod
    def realize(self, theta: np.ndarray, noise: np.ndarray) -> Sample: ...

    def sample(self, theta, rng: np.random.Generator, size: Optional[int] = None) -> Sample:
        theta = self.check_param(theta)
        n = 1 if size is None else int(size)
        z = self.realize(theta, self.draw_noise(rng, n))
        return z[0] if size is None else z

    def check_param(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape[-1] != self.param_dim:
            raise DimensionError(f"environment expects dimension {self.param_dim}, got {theta.shape[-1]}")
        return theta

    def default_theta1(self) -> np.ndarray:
        return np.zeros(self.param_dim)

    def decoupled_minimizer(self, theta) -> np.ndarray:
        """``G(theta)``: the risk minimizer on ``D(theta)``."""
        raise ClosedFormUnavailable(f"{type(self).__name__} has no closed-form G")

    def stable_point(self) -> np.ndarray:
        raise ClosedFormUnavailable(f"{type(self).__name__} has no closed-form stable point")

    def exact_population_gradient(self, theta) -> np.ndarray:
        raise ClosedFormUnavailable(f"{type(self).__name__} has no closed-form population gradient")


def population_gradient(env: PerformativeEnvironment, theta, mc_samples: int = 0,
                        rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """``E_{z ~ D(theta)} grad l(z; theta)``; exact when the environment has a closed form."""
    theta = env.check_param(theta)
    if env.has_closed_form_population_gradient:
        return env.exact_population_gradient(theta)
    if mc_samples < 1 or rng is None:
        raise ConfigurationError("Monte-Carlo population gradient needs mc_samples >= 1 and an rng")
    z = env.sample(theta, rng, size=mc_samples)
    return env.loss.grad(z, theta).mean(axis=0)


def performative_risk(env: PerformativeEnvironment, theta, mc_samples: int,
                      rng: np.random.Generator) -> float:
    """Monte-Carlo estimate of ``PR(theta) = E_{z ~ D(theta)} l(z; theta)``."""
    if mc_samples < 1:
        raise ConfigurationError("mc_samples must be >= 1")
    theta = env.check_param(theta)
    z = env.sample(theta, rng, size=mc_samples)
    return float(np.mean(env.loss.value(z, theta)))


def geometric_grid(total: int, num: int = 200) -> np.ndarray:
    """Strictly increasing integer grid from 1 to ``total`` with about ``num`` points."""
    if total < 1:
        raise ConfigurationError("grid total must be >= 1")
    grid = np.unique(np.round(np.geomspace(1, total, num=max(num, 2))).astype(np.int64))
    return grid[(grid >= 1) & (grid <= total)]


@dataclass
class Record:
    step: int
    samples: int
    deployments: int
    theta: np.ndarray
    dist_sq: Optional[float] = None
    perf_risk: Optional[float] = None
    status: str = "ok"


@dataclass
class Trajectory:
    """Checkpointed history of one optimizer run."""

    records: list = field(default_factory=list)
    status: str = "ok"
    notes: list = field(default_factory=list)

    def record(self, step, samples, deployments, theta, dist_sq=None, perf_risk=None, status="ok"):
        if self.records:
            last = self.records[-1]
            if samples < last.samples or deployments < last.deployments:
                raise ValueError("samples and deployments must be nondecreasing")
        self.records.append(Record(int(step), int(samples), int(deployments),
                                   np.array(theta, dtype=np.float64),
                                   None if dist_sq is None else float(dist_sq),
                                   None if perf_risk is None else float(perf_risk), status))

    def __len__(self):
        return len(self.records)

    @property
    def final(self) -> Record:
        return self.records[-1]

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"

    @property
    def steps(self) -> np.ndarray:
        return np.array([r.step for r in self.records])

    @property
    def samples(self) -> np.ndarray:
        return np.array([r.samples for r in self.records])

    @property
    def deployments(self) -> np.ndarray:
        return np.array([r.deployments for r in self.records])

    @property
    def thetas(self) -> np.ndarray:
        return np.array([r.theta for r in self.records])

    @property
    def dist_sq(self) -> np.ndarray:
        return np.array([np.nan if r.dist_sq is None else r.dist_sq for r in self.records])


def dist_sq_to(theta: np.ndarray, theta_ps: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if theta_ps is None:
        return None
    return np.sum((np.asarray(theta) - theta_ps) ** 2, axis=-1)


def validate_dims(indices: Sequence[int], dim: int, index_base: int = 0) -> np.ndarray:
    """Convert strategic coordinate indices to 0-based and range-check them."""
    idx = np.asarray(list(indices), dtype=np.int64) - int(index_base)
    if idx.size == 0:
        raise ConfigurationError("at least one strategic dimension is required")
    if np.any(idx < 0) or np.any(idx >= dim):
        raise ConfigurationError(f"strategic dims {list(indices)} (base {index_base}) out of range for d={dim}")
    if len(set(idx.tolist())) != idx.size:
        raise ConfigurationError("strategic dims must be distinct")
    return idx
