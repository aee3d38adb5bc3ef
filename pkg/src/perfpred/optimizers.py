"""Greedy deploy, lazy deploy, repeated gradient descent and repeated risk minimization.

The stochastic methods advance a batch of independent replicates in lockstep:
``theta`` has shape ``(R, d)`` and replicate ``r`` draws only from its own
generator ``rngs[r]``.  The single-run functions are the ``R = 1`` case.
"""
from __future__ import annotations

import logging
import warnings
from typing import Optional, Sequence, Union

import numpy as np

from .core import (DIVERGENCE_THRESHOLD, ConfigurationError, ConvergenceError, PerformativeEnvironment,
                   Trajectory, as_param, dist_sq_to, population_gradient, project)
from .schedules import DeploymentSchedule, StepSchedule

log = logging.getLogger(__name__)

NOISE_BLOCK = 4096


def _diverged(theta: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return ~np.all(np.isfinite(theta), axis=-1) | (np.max(np.abs(theta), axis=-1) > DIVERGENCE_THRESHOLD)


def _draw(env, rngs, size):
    return np.stack([env.draw_noise(rng, size) for rng in rngs], axis=0)


class _Batch:
    """Bookkeeping shared by the batched stochastic methods."""

    def __init__(self, env, theta1, rngs, theta_ps):
        self.env = env
        theta1 = as_param(theta1, env.param_dim)
        self.R = len(rngs)
        self.theta = np.tile(project(theta1, env.box), (self.R, 1))
        self.alive = np.ones(self.R, dtype=bool)
        self.theta_ps = None if theta_ps is None else as_param(theta_ps, env.param_dim)
        self.trajs = [Trajectory() for _ in range(self.R)]

    def record(self, step, samples, deployments, theta=None):
        theta = self.theta if theta is None else theta
        d2 = dist_sq_to(theta, self.theta_ps)
        for r in np.flatnonzero(self.alive):
            self.trajs[r].record(step, samples, deployments, theta[r], None if d2 is None else d2[r])

    def update(self, current, proposed, step, samples, deployments):
        """Accept ``proposed`` for live runs; freeze and flag runs that blew up."""
        bad = _diverged(proposed) & self.alive
        if bad.any():
            for r in np.flatnonzero(bad):
                t = self.trajs[r]
                t.status = "diverged"
                t.record(step, samples, deployments, np.where(np.isfinite(proposed[r]), proposed[r], np.nan),
                         np.inf, status="diverged")
            self.alive &= ~bad
        return np.where(self.alive[:, None], proposed, current)


def greedy_deploy_runs(env: PerformativeEnvironment, theta1, total_steps: int, schedule: StepSchedule,
                       rngs: Sequence[np.random.Generator], *, theta_ps=None, checkpoints=None) -> list:
    """Greedy deploy for ``len(rngs)`` independent replicates.

    Each step draws ``z ~ D(theta_k)``, takes one projected stochastic
    gradient step and deploys the result, so samples and deployments advance
    together.  ``checkpoints`` lists the step counts to record (default: all).
    """
    if total_steps < 1:
        raise ConfigurationError("total_steps must be >= 1")
    batch = _Batch(env, theta1, rngs, theta_ps)
    ckpt = set(range(1, total_steps + 1)) if checkpoints is None else {int(c) for c in checkpoints}
    batch.record(0, 0, 0)
    loss, box = env.loss, env.box
    theta = batch.theta
    for start in range(0, total_steps, NOISE_BLOCK):
        size = min(NOISE_BLOCK, total_steps - start)
        noise = _draw(env, rngs, size)
        etas = schedule(np.arange(start + 1, start + size + 1))
        for t in range(size):
            k = start + t + 1
            z = env.realize(theta, noise[:, t])
            proposed = project(theta - etas[t] * loss.grad(z, theta), box)
            theta = batch.update(theta, proposed, k, k, k)
            if k in ckpt:
                batch.record(k, k, k, theta)
        if not batch.alive.any():
            break
    batch.theta = theta
    return batch.trajs


def greedy_deploy(env, theta1, total_steps, schedule, rng, *, theta_ps=None, checkpoints=None) -> Trajectory:
    """Single-run greedy deploy; see :func:`greedy_deploy_runs`."""
    return greedy_deploy_runs(env, theta1, total_steps, schedule, [rng],
                              theta_ps=theta_ps, checkpoints=checkpoints)[0]


def lazy_deploy_runs(env: PerformativeEnvironment, theta1, num_deployments: Optional[int],
                     dep_schedule: DeploymentSchedule, step_schedule: StepSchedule,
                     rngs: Sequence[np.random.Generator], *, sample_budget: Optional[int] = None,
                     theta_ps=None) -> list:
    """Lazy deploy for ``len(rngs)`` independent replicates.

    Round ``k`` takes ``n(k)`` stochastic gradient steps on samples from
    ``D(theta_k)`` (the last *deployed* model) with step sizes indexed by the
    inner counter, then deploys the last inner iterate.  The run stops after
    ``num_deployments`` rounds or once ``sample_budget`` samples are used; a
    round cut short by the budget still deploys.  One record per deployment.
    """
    if num_deployments is None and sample_budget is None:
        raise ConfigurationError("give num_deployments or sample_budget")
    if num_deployments is not None and num_deployments < 1:
        raise ConfigurationError("num_deployments must be >= 1")
    if sample_budget is not None and sample_budget < 1:
        raise ConfigurationError("sample_budget must be >= 1")
    batch = _Batch(env, theta1, rngs, theta_ps)
    batch.record(0, 0, 0)
    loss, box = env.loss, env.box
    theta = batch.theta
    samples = 0
    k = 0
    while batch.alive.any():
        if num_deployments is not None and k >= num_deployments:
            break
        if sample_budget is not None and samples >= sample_budget:
            break
        k += 1
        n_k = dep_schedule(k)
        if sample_budget is not None:
            n_k = min(n_k, sample_budget - samples)
        phi = theta.copy()
        for start in range(0, n_k, NOISE_BLOCK):
            size = min(NOISE_BLOCK, n_k - start)
            noise = _draw(env, rngs, size)
            etas = step_schedule(np.arange(start + 1, start + size + 1))
            for j in range(size):
                z = env.realize(theta, noise[:, j])
                proposed = project(phi - etas[j] * loss.grad(z, phi), box)
                phi = batch.update(phi, proposed, k, samples + start + j + 1, k - 1)
        samples += n_k
        theta = np.where(batch.alive[:, None], phi, theta)
        batch.record(k, samples, k, theta)
    batch.theta = theta
    return batch.trajs


def lazy_deploy(env, theta1, num_deployments, dep_schedule, step_schedule, rng, *,
                sample_budget=None, theta_ps=None) -> Trajectory:
    """Single-run lazy deploy; see :func:`lazy_deploy_runs`."""
    return lazy_deploy_runs(env, theta1, num_deployments, dep_schedule, step_schedule, [rng],
                            sample_budget=sample_budget, theta_ps=theta_ps)[0]


def rgd(env: PerformativeEnvironment, theta1, eta: Union[float, StepSchedule], num_steps: int,
        mc_samples: int = 0, rng: Optional[np.random.Generator] = None, *, theta_ps=None) -> Trajectory:
    """Repeated gradient descent on the population gradient of the induced distribution.

    Deterministic when the environment has a closed-form population gradient
    (``mc_samples`` and ``rng`` are then ignored).  Divergence is recorded in
    the trajectory status and stops the run; it is not raised.
    """
    if num_steps < 1:
        raise ConfigurationError("num_steps must be >= 1")
    schedule = eta if isinstance(eta, StepSchedule) else StepSchedule.constant(eta)
    theta = project(as_param(theta1, env.param_dim), env.box)
    theta_ps = None if theta_ps is None else as_param(theta_ps, env.param_dim)
    traj = Trajectory()
    traj.record(0, 0, 0, theta, dist_sq_to(theta, theta_ps))
    samples = 0
    for k in range(1, num_steps + 1):
        g = population_gradient(env, theta, mc_samples, rng)
        if not env.has_closed_form_population_gradient:
            samples += mc_samples
        with np.errstate(over="ignore", invalid="ignore"):
            proposed = project(theta - schedule(k) * g, env.box)
        if _diverged(proposed):
            traj.status = "diverged"
            traj.record(k, samples, k, proposed, np.inf, status="diverged")
            log.info("rgd diverged at step %d", k)
            break
        theta = proposed
        traj.record(k, samples, k, theta, dist_sq_to(theta, theta_ps))
    return traj


def solve_decoupled(env: PerformativeEnvironment, theta, tol: float = 1e-10, max_iter: int = 1_000_000,
                    init=None) -> np.ndarray:
    """``G(theta)``: exact when available, else full-batch gradient descent.

    The iterative route needs a finite-support environment (one exposing
    ``induced_dataset``).  It uses the constant step ``1/beta`` where ``beta``
    bounds the smoothness of the average loss on the induced data, and stops
    once the gradient norm drops below ``tol``.
    """
    if env.has_closed_form_G:
        return project(env.decoupled_minimizer(theta), env.box)
    if not hasattr(env, "induced_dataset"):
        raise ConfigurationError(f"{type(env).__name__} has neither a closed-form G nor a finite support")
    data = env.induced_dataset(theta)
    step = 1.0 / env.loss.smoothness(data.features)
    phi = np.array(theta if init is None else init, dtype=np.float64)
    for _ in range(int(max_iter)):
        g = env.loss.grad(data, phi).mean(axis=0)
        norm = float(np.linalg.norm(g))
        if norm < tol:
            return phi
        phi = project(phi - step * g, env.box)
    raise ConvergenceError(f"inner solver did not reach gradient norm {tol} in {max_iter} iterations "
                           f"(residual {norm:.3e})", residual=norm)


def rrm(env: PerformativeEnvironment, theta1, num_rounds: int, tol: float = 1e-10, *,
        theta_ps=None, max_iter: int = 1_000_000) -> Trajectory:
    """Repeated risk minimization ``theta_{k+1} = G(theta_k)`` for ``num_rounds`` rounds."""
    if num_rounds < 1:
        raise ConfigurationError("num_rounds must be >= 1")
    theta = project(as_param(theta1, env.param_dim), env.box)
    theta_ps = None if theta_ps is None else as_param(theta_ps, env.param_dim)
    traj = Trajectory()
    traj.record(0, 0, 0, theta, dist_sq_to(theta, theta_ps))
    for k in range(1, num_rounds + 1):
        theta = solve_decoupled(env, theta, tol, max_iter, init=theta)
        if _diverged(theta):
            traj.status = "diverged"
            traj.record(k, 0, k, theta, np.inf, status="diverged")
            break
        traj.record(k, 0, k, theta, dist_sq_to(theta, theta_ps))
    return traj


def empirical_stable_point(env: PerformativeEnvironment, theta1=None, tol: float = 1e-9,
                           max_rounds: int = 10_000, inner_tol: Optional[float] = None) -> np.ndarray:
    """Run RRM until successive iterates are within ``tol``; return the fixed point."""
    if not env.constants.in_convergence_regime:
        warnings.warn(f"epsilon={env.constants.epsilon} >= gamma/beta={env.constants.ratio:.4g}: "
                      "RRM is not guaranteed to converge", RuntimeWarning, stacklevel=2)
    inner_tol = tol * 1e-2 if inner_tol is None else inner_tol
    theta = env.default_theta1() if theta1 is None else as_param(theta1, env.param_dim)
    theta = project(theta, env.box)
    for _ in range(max_rounds):
        nxt = solve_decoupled(env, theta, inner_tol, init=theta)
        if _diverged(nxt):
            raise ConvergenceError("RRM diverged", residual=np.inf)
        step = float(np.linalg.norm(nxt - theta))
        theta = nxt
        if step < tol:
            return theta
    raise ConvergenceError(f"RRM did not converge to {tol} within {max_rounds} rounds (last step {step:.3e})",
                           residual=step)
