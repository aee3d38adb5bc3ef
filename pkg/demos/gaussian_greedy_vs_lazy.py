"""Greedy versus lazy deploy on Gaussian mean estimation.

Each sample is drawn from N(mu + eps * theta, sigma^2), so the deployed
estimate shifts the data it is trained on.  We run both methods with the
same 50k-sample budget at a weak and a strong sensitivity and print the
mean squared distance to the stable point.

    python demos/gaussian_greedy_vs_lazy.py
"""
import numpy as np

from perfpred import (DeploymentSchedule, GaussianEnv, StepSchedule, geometric_grid, greedy_deploy_runs,
                      lazy_deploy_runs, run_rng)
from perfpred.analysis import BoundParams, greedy_bound

BUDGET = 50_000
RUNS = 30

for eps in (0.2, 0.9):
    env = GaussianEnv(mu=10.0, sigma=0.1, epsilon=eps)
    theta_ps = env.stable_point()
    theta1 = env.default_theta1()
    print(f"\nepsilon = {eps}: stable point {theta_ps[0]:g}, start {theta1[0]:g}")

    rngs = [run_rng(0, r) for r in range(RUNS)]
    greedy = greedy_deploy_runs(env, theta1, BUDGET, StepSchedule.greedy_theorem(env.constants), rngs,
                                theta_ps=theta_ps, checkpoints=geometric_grid(BUDGET, 6))
    rngs = [run_rng(0, r) for r in range(RUNS)]
    lazy = lazy_deploy_runs(env, theta1, None, DeploymentSchedule(n0=1, alpha=1),
                            StepSchedule.lazy_theorem(env.constants), rngs, sample_budget=BUDGET,
                            theta_ps=theta_ps)

    params = BoundParams.from_constants(env.constants, float(np.sum((theta1 - theta_ps) ** 2)))
    print("  greedy: samples   mean dist^2   theorem bound")
    for i, k in enumerate(greedy[0].steps):
        mean = np.mean([t.dist_sq[i] for t in greedy])
        print(f"          {k:7d}   {mean:11.3e}   {greedy_bound(k, params):11.3e}")
    g_final = np.mean([t.final.dist_sq for t in greedy])
    l_final = np.mean([t.final.dist_sq for t in lazy])
    print(f"  after {BUDGET} samples: greedy {g_final:.3e} ({BUDGET} deployments), "
          f"lazy {l_final:.3e} ({lazy[0].final.deployments} deployments)")
    print("  winner:", "greedy" if g_final < l_final else "lazy")
