"""Stochastic optimization under performative prediction."""

__version__ = "0.1.0"

from .core import (Box, ClosedFormUnavailable, ConfigurationError, ConvergenceError, DimensionError,
                   PerformativeEnvironment, ProblemConstants, RegimeError, Sample, Trajectory,
                   geometric_grid, loss_grad, performative_risk, population_gradient, project, run_rng)
from .environments import (EtaEnv, GaussianEnv, PointMassEnv, StrategicEnv, best_response,
                           closed_form_stable_point, compute_logistic_constants)
from .schedules import (DeploymentSchedule, StepSchedule, greedy_step_size, lazy_step_size)
from .optimizers import (empirical_stable_point, greedy_deploy, greedy_deploy_runs, lazy_deploy,
                         lazy_deploy_runs, rgd, rrm, solve_decoupled)
from .analysis import (BoundParams, confidence_band, empirical_w1_1d, greedy_bound,
                       lazy_contraction_constant, sensitivity_audit)
