"""Step-size and deployment schedules."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ConfigurationError, ProblemConstants, RegimeError


@dataclass(frozen=True)
class StepSchedule:
    """``eta(i) = c_eta / (i + k0)`` for ``i >= 1``, or a constant.

    Every theory-backed schedule has this form:

    * ``greedy_theorem``: ``c_eta = 1/(gamma - eps beta)``, ``k0 = 8 L^2 / (gamma - eps beta)^2``
    * ``lazy_theorem``:   ``c_eta = 1/gamma``, ``k0 = 8 L^2 / gamma^2`` (indexed by the inner step)
    * ``override``:       ``c_eta = factor/gamma``, ``k0 = 8 L^2 / gamma^2``
    """

    variant: str
    c_eta: float = 0.0
    k0: float = 0.0
    eta: Optional[float] = None

    def __post_init__(self):
        if self.variant == "constant":
            if self.eta is None or not self.eta > 0:
                raise ConfigurationError("constant schedule needs eta > 0")
        elif self.c_eta <= 0 or self.k0 < 0:
            raise ConfigurationError(f"invalid schedule constants c_eta={self.c_eta}, k0={self.k0}")

    @classmethod
    def greedy_theorem(cls, constants: ProblemConstants) -> "StepSchedule":
        if not constants.in_convergence_regime:
            raise RegimeError(
                f"epsilon={constants.epsilon} >= gamma/beta={constants.ratio:.6g}: the greedy step size "
                "needs gamma - epsilon*beta > 0; use StepSchedule.override (epsilon-free) instead")
        a = constants.effective_convexity
        return cls("greedy_theorem", 1.0 / a, 8.0 * constants.L_sq / a ** 2)

    @classmethod
    def lazy_theorem(cls, constants: ProblemConstants) -> "StepSchedule":
        g = constants.gamma
        if g <= 0:
            raise ConfigurationError("lazy step size needs gamma > 0")
        return cls("lazy_theorem", 1.0 / g, 8.0 * constants.L_sq / g ** 2)

    @classmethod
    def override(cls, constants: ProblemConstants, factor: float = 100.0) -> "StepSchedule":
        g = constants.gamma
        if g <= 0:
            raise ConfigurationError("override step size needs gamma > 0")
        return cls("override", float(factor) / g, 8.0 * constants.L_sq / g ** 2)

    @classmethod
    def constant(cls, eta: float) -> "StepSchedule":
        return cls("constant", eta=float(eta))

    def __call__(self, index):
        """Step size at 1-based ``index`` (scalar or array)."""
        index = np.asarray(index, dtype=np.float64)
        if np.any(index < 1):
            raise ValueError("step index must be >= 1")
        if self.variant == "constant":
            out = np.full(index.shape, self.eta)
        else:
            out = self.c_eta / (index + self.k0)
        return float(out) if out.ndim == 0 else out

    def describe(self) -> dict:
        if self.variant == "constant":
            return {"variant": self.variant, "eta": self.eta}
        return {"variant": self.variant, "c_eta": self.c_eta, "k0": self.k0}


def greedy_step_size(k: int, constants: ProblemConstants) -> float:
    """``((gamma - eps beta) k + 8 L^2 / (gamma - eps beta))^-1``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not constants.in_convergence_regime:
        StepSchedule.greedy_theorem(constants)  # raises with guidance
    a = constants.effective_convexity
    return 1.0 / (a * k + 8.0 * constants.L_sq / a)


def lazy_step_size(j: int, constants: ProblemConstants) -> float:
    """``(gamma j + 8 L^2 / gamma)^-1``; independent of the outer index and of epsilon."""
    if j < 1:
        raise ValueError("j must be >= 1")
    if constants.gamma <= 0:
        raise ConfigurationError("lazy step size needs gamma > 0")
    return 1.0 / (constants.gamma * j + 8.0 * constants.L_sq / constants.gamma)


def resolve_greedy_schedule(constants: ProblemConstants, step: str = "auto", factor: float = 100.0,
                            eta: Optional[float] = None):
    """Pick the greedy schedule; returns ``(schedule, note)``.

    ``auto`` uses the theorem schedule inside the convergence regime and
    otherwise drops the epsilon dependence, i.e. the ``override`` form with
    factor 1 (the lazy initial step size).  ``note`` describes any switch.
    """
    if step == "theorem":
        return StepSchedule.greedy_theorem(constants), None
    if step == "override":
        return StepSchedule.override(constants, factor), f"override schedule with factor {factor}"
    if step == "constant":
        return StepSchedule.constant(eta), None
    if step == "auto":
        if constants.in_convergence_regime:
            return StepSchedule.greedy_theorem(constants), None
        note = (f"epsilon={constants.epsilon} >= gamma/beta={constants.ratio:.6g}: greedy switched to the "
                "epsilon-free schedule c_eta=1/gamma, k0=8L^2/gamma^2")
        return StepSchedule.override(constants, 1.0), note
    raise ConfigurationError(f"unknown step variant {step!r}")


def resolve_lazy_schedule(constants: ProblemConstants, step: str = "auto", factor: float = 100.0,
                          eta: Optional[float] = None):
    if step in ("auto", "theorem"):
        return StepSchedule.lazy_theorem(constants), None
    if step == "override":
        return StepSchedule.override(constants, factor), f"override schedule with factor {factor}"
    if step == "constant":
        return StepSchedule.constant(eta), None
    raise ConfigurationError(f"unknown step variant {step!r}")


@dataclass(frozen=True)
class DeploymentSchedule:
    """``n(k) = ceil(n0 * k^alpha)`` inner steps before the k-th deployment."""

    n0: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.n0 < 1:
            raise ConfigurationError("n0 must be >= 1")
        if self.alpha <= 0:
            raise ConfigurationError("alpha must be > 0")

    def __call__(self, k: int) -> int:
        if k < 1:
            raise ValueError("k must be >= 1")
        v = self.n0 * float(k) ** self.alpha
        r = round(v)
        # keep exact integers exact despite pow() rounding
        if abs(v - r) <= 1e-12 * max(1.0, v):
            return max(1, int(r))
        return max(1, math.ceil(v))

    def grid(self, num_rounds: int) -> np.ndarray:
        return np.array([self(k) for k in range(1, num_rounds + 1)], dtype=np.int64)
