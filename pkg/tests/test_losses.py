"""Analytic gradients against central finite differences (step 1e-6)."""
import numpy as np
import pytest

from perfpred import Sample
from perfpred.losses import LinearQuadraticLoss, LinearSquaredLoss, RegularizedLogisticLoss, SquaredLoss

H = 1e-6
N_POINTS = 100


def fd_grad(loss, z, theta):
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = H
        g[i] = (loss.value(z, theta + e) - loss.value(z, theta - e)) / (2 * H)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-3)


def random_cases(rng):
    d = 5
    for _ in range(N_POINTS):
        yield (SquaredLoss(d), Sample(rng.normal(0, 3, d)), rng.normal(0, 3, d))
        yield (LinearSquaredLoss(d - 1), Sample(rng.normal(size=d - 1), rng.normal(0, 5)), rng.normal(0, 2, d))
        yield (LinearQuadraticLoss(rng.uniform(0.1, 3), rng.uniform(0, 3)), Sample(rng.normal(0, 2, 1)),
               rng.normal(0, 2, 1))
        yield (RegularizedLogisticLoss(d, rng.uniform(0.01, 1)), Sample(rng.normal(size=d), float(rng.integers(2))),
               rng.normal(0, 1.5, d))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    worst = 0.0
    count = 0
    for loss, z, theta in random_cases(rng):
        err = rel_err(loss.grad(z, theta), fd_grad(loss, z, theta))
        worst = max(worst, err)
        count += 1
    assert count == 4 * N_POINTS
    assert worst < 1e-5


def test_logistic_is_stable_for_large_scores():
    loss = RegularizedLogisticLoss(2, 0.1)
    z = Sample(np.array([[800.0, 0.0], [-800.0, 0.0]]), np.array([1.0, 0.0]))
    theta = np.array([1.0, 0.0])
    assert np.all(np.isfinite(loss.value(z, theta)))
    np.testing.assert_allclose(loss.grad(z, theta), 0.1 * theta[None, :].repeat(2, 0), atol=1e-12)


def test_logistic_smoothness_bounds_hessian():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(200, 4))
    loss = RegularizedLogisticLoss(4, 0.05)
    beta = loss.smoothness(x)
    for _ in range(20):
        theta = rng.normal(size=4)
        p = 1 / (1 + np.exp(-x @ theta))
        hess = (x * (p * (1 - p))[:, None]).T @ x / len(x) + 0.05 * np.eye(4)
        assert np.linalg.eigvalsh(hess)[-1] <= beta + 1e-12


@pytest.mark.parametrize("loss,z,theta", [
    (SquaredLoss(2), Sample(np.ones((7, 2))), np.zeros(2)),
    (RegularizedLogisticLoss(3, 0.1), Sample(np.ones((7, 3)), np.zeros(7)), np.zeros(3)),
])
def test_losses_broadcast_over_batch(loss, z, theta):
    assert loss.grad(z, theta).shape == (7, theta.size)
    assert loss.value(z, theta).shape == (7,)
