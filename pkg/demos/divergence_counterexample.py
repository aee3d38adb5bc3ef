"""Repeated gradient descent diverging once performative effects dominate.

The distribution is a point mass at 1 + eps * theta and the loss is
-b * z * theta + (g / 2) * theta^2.  When eps * b >= g every step pushes
theta further out, whatever the step size.  A stable instance is shown for
contrast.

    python demos/divergence_counterexample.py
"""
from perfpred import PointMassEnv, rgd

cases = [("convex only (g = 0)", PointMassEnv(epsilon=1.0, beta_c=1.0, gamma_c=0.0)),
         ("eps >= g / b", PointMassEnv(epsilon=1.0, beta_c=2.0, gamma_c=1.0)),
         ("eps < g / b", PointMassEnv(epsilon=0.2, beta_c=2.0, gamma_c=1.0))]

for label, env in cases:
    for eta in (0.01, 0.1, 1.0):
        traj = rgd(env, [1.0], eta, 10_000)
        last_ok = [r for r in traj.records if r.status == "ok"][-1]
        print(f"{label:22s} eta={eta:<5} status={traj.status:9s} steps={traj.final.step:6d} "
              f"|theta|={abs(last_ok.theta[0]):.3e}")
    if env.has_closed_form_stable_point and env.constants.in_convergence_regime:
        print(f"{'':22s} stable point {env.stable_point()[0]:.6g}")
