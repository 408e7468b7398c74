"""Reduced Basis Neural Operator: greedy distillation of pre-trained PINNs into a
one-layer reduced model with a physics-driven online encoder, plus reference
solvers, random-field samplers and PCA-Net/DeepONet baselines."""
from .errors import (
    CapabilityError, ConfigurationError, ContractViolation, DomainError, GreedySelectionError, NumericalFailure,
    RebanoError,
)
from .fields import Field, Grid
from .grf import CovarianceSpec, evaluate_at, pushforward_T, sample
from .nn import NetworkParams, forward, init_network, jet, param_gradient
from .optim import LRSchedule, adam_init, adam_step, lbfgs_minimize
from .solvers import solve_darcy_2d, solve_ns_2d, solve_poisson_1d
from .pinn import (
    PinnConfig, assemble_gram, darcy_instance, ns_instance, physics_loss, poisson_instance, rvpinn_loss,
    strong_loss, train_pinn,
)
from .reduced import ReducedBasis, greedy_build, indicator, online_solve_linear, online_solve_nonlinear, predict
from .baselines import BaselineConfig, pca_fit, pca_project, pca_reconstruct, predict_baseline, train_baseline
from .metrics import rel_l2

__version__ = "0.1.0"
