"""Simultaneous estimation of sparse precision matrices from grouped count
data under a hierarchical Poisson log-normal model.

Counts are Poisson with log-rates drawn from a latent multivariate normal; a
shared spike-and-slab prior couples the groups' precision matrices so edges
supported across groups are penalized less. Fitting runs a variational EM
loop with a consensus-ADMM mean update and an elementwise-weighted graphical
lasso M-step, parallelized over groups. Hot kernels run in a compiled
extension when built (see ``plnet._backend.BACKEND``).
"""

__version__ = "0.1.0"

from ._backend import BACKEND
from .admm import AdmmConfig, AdmmState, solve_mu, solve_sigma2
from .datasets import (
    CountDataset,
    FitConfig,
    FitReport,
    GroupData,
    Hyperparameters,
    ModelState,
    VariationalState,
    initialize,
    load_dataset,
    save_dataset,
)
from .engine import (
    InclusionState,
    default_grid,
    fit,
    grid_fit,
    penalty_matrix,
    posterior_inclusion,
    scatter_matrix,
    update_beta,
    variational_ebic,
    variational_loglik,
)
from .metrics import ConfusionCounts, confusion, edge_set, mcc, mofe, precision_recall
from .simulate import (
    GraphSpec,
    PrecisionSpec,
    gen_adjacency,
    precision_from_adjacency,
    sample_multinomial_misspec,
    sample_pln,
    simulate_dataset,
)
from .wglasso import GlassoProblem, kkt_residual
from .wglasso import solve as solve_wglasso

__all__ = [
    "BACKEND",
    "AdmmConfig",
    "AdmmState",
    "ConfusionCounts",
    "CountDataset",
    "FitConfig",
    "FitReport",
    "GlassoProblem",
    "GraphSpec",
    "GroupData",
    "Hyperparameters",
    "InclusionState",
    "ModelState",
    "PrecisionSpec",
    "VariationalState",
    "confusion",
    "default_grid",
    "edge_set",
    "fit",
    "gen_adjacency",
    "grid_fit",
    "initialize",
    "kkt_residual",
    "load_dataset",
    "mcc",
    "mofe",
    "penalty_matrix",
    "posterior_inclusion",
    "precision_from_adjacency",
    "precision_recall",
    "sample_multinomial_misspec",
    "sample_pln",
    "save_dataset",
    "scatter_matrix",
    "simulate_dataset",
    "solve_mu",
    "solve_sigma2",
    "solve_wglasso",
    "update_beta",
    "variational_ebic",
    "variational_loglik",
]
