"""Grouped count datasets, model state containers and their disk layout.

A dataset directory holds, for each group k (1-based), a headerless CSV
``group_<k>.counts.csv`` plus optional ``group_<k>.covariates.csv`` and
``group_<k>.offsets.csv``. Missing covariates default to an intercept column
of ones, missing offsets to zeros.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class DatasetError(ValueError):
    """Raised when a dataset violates its shape or value constraints."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a precision matrix fails its Cholesky factorization."""


class RankDeficiencyError(np.linalg.LinAlgError):
    """Raised when a covariate Gram matrix is singular."""


class SolverError(RuntimeError):
    """Raised when an inner solver fails; carries (group, iteration) context."""


@dataclass
class GroupData:
    """One group's observations: counts y (n x p), covariates z (n x d),
    offsets o (n x p)."""

    counts: np.ndarray
    covariates: np.ndarray
    offsets: np.ndarray

    @property
    def n_obs(self) -> int:
        return self.counts.shape[0]

    def validate(self) -> None:
        y, z, o = self.counts, self.covariates, self.offsets
        if y.ndim != 2 or z.ndim != 2 or o.ndim != 2:
            raise DatasetError("counts, covariates and offsets must be 2-D")
        if np.any(y < 0):
            raise DatasetError("counts must be nonnegative")
        if np.any(y != np.floor(y)) or not np.all(np.isfinite(y)):
            raise DatasetError("counts must be integers")
        n = y.shape[0]
        if z.shape[0] != n or o.shape[0] != n:
            raise DatasetError(
                f"row mismatch: counts {n}, covariates {z.shape[0]}, "
                f"offsets {o.shape[0]}"
            )
        if o.shape[1] != y.shape[1]:
            raise DatasetError("offsets must match the count dimension")


@dataclass
class CountDataset:
    """K groups sharing the gene dimension p and covariate dimension d."""

    groups: list[GroupData]

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def p(self) -> int:
        return self.groups[0].counts.shape[1]

    @property
    def d(self) -> int:
        return self.groups[0].covariates.shape[1]

    def validate(self) -> None:
        if not self.groups:
            raise DatasetError("a dataset needs at least one group")
        p, d = self.p, self.d
        for k, g in enumerate(self.groups, start=1):
            g.validate()
            if g.counts.shape[1] != p:
                raise DatasetError(
                    f"group {k} has p={g.counts.shape[1]}, expected {p}"
                )
            if g.covariates.shape[1] != d:
                raise DatasetError(
                    f"group {k} has d={g.covariates.shape[1]}, expected {d}"
                )


@dataclass
class ModelState:
    """Per-group precision matrices and regression coefficients."""

    omegas: list[np.ndarray]  # K symmetric PD p x p
    betas: list[np.ndarray]   # K p x d

    def lambdas(self, dataset: CountDataset) -> list[np.ndarray]:
        """Mean matrices o + z beta^T, computed on demand."""
        return [
            g.offsets + g.covariates @ b.T
            for g, b in zip(dataset.groups, self.betas)
        ]


@dataclass
class VariationalState:
    """Mean-field Gaussian parameters of the latent log-rates."""

    means: list[np.ndarray]      # K arrays, n_k x p
    variances: list[np.ndarray]  # K arrays, n_k x p, strictly positive


@dataclass
class Hyperparameters:
    """Spike-and-slab prior settings; tau=inf disables the diagonal penalty."""

    p0: float = 0.5
    v0: float = 0.1
    v1: float = 1.0
    tau: float = math.inf

    def __post_init__(self):
        if not 0.0 < self.p0 < 1.0:
            raise ValueError(f"p0 must be in (0,1), got {self.p0}")
        if not 0.0 < self.v0 < self.v1:
            raise ValueError(
                f"need 0 < v0 < v1, got v0={self.v0}, v1={self.v1}"
            )
        if not self.tau > 0.0:
            raise ValueError(f"tau must be positive (or inf), got {self.tau}")

    @property
    def diag_rate(self) -> float:
        """Coefficient 2/tau of the diagonal penalty (0 when tau=inf)."""
        return 0.0 if math.isinf(self.tau) else 2.0 / self.tau


@dataclass
class AdmmConfig:
    rho: float = 1.0
    tol: float = 1e-6
    max_iter: int = 500
    newton_tol: float = 1e-12
    newton_max_iter: int = 100

    def __post_init__(self):
        if min(self.rho, self.tol, self.newton_tol) <= 0:
            raise ValueError("rho and tolerances must be positive")
        if self.max_iter < 1 or self.newton_max_iter < 1:
            raise ValueError("iteration caps must be >= 1")


@dataclass
class FitConfig:
    max_outer_iter: int = 100
    outer_tol: float = 1e-4
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    glasso_tol: float = 1e-6
    glasso_max_sweeps: int = 200
    seed: Optional[int] = None  # reserved for stochastic tie-breaking; unused
    threads: int = 0            # 0 = all cores

    def __post_init__(self):
        if self.outer_tol <= 0 or self.glasso_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_outer_iter < 0:
            raise ValueError("max_outer_iter must be >= 0")

    def resolved_threads(self) -> int:
        if self.threads and self.threads > 0:
            return self.threads
        return os.cpu_count() or 1


@dataclass
class FitReport:
    outer_iterations: int = 0
    converged: bool = False
    delta_trace: list[float] = field(default_factory=list)
    ebic: list[float] = field(default_factory=list)
    loglik: list[float] = field(default_factory=list)
    edge_counts: list[int] = field(default_factory=list)
    admm_nonconverged: int = 0
    timings: dict[str, float] = field(default_factory=dict)
    hyper: Optional[Hyperparameters] = None
    total_ebic: Optional[float] = None
    selected: bool = False

    def to_json_dict(self) -> dict:
        out = {
            "outer_iterations": self.outer_iterations,
            "converged": self.converged,
            "delta_trace": [float(x) for x in self.delta_trace],
            "ebic": [float(x) for x in self.ebic],
            "loglik": [float(x) for x in self.loglik],
            "edge_counts": [int(x) for x in self.edge_counts],
            "admm_nonconverged": int(self.admm_nonconverged),
            "timings": {k: float(v) for k, v in self.timings.items()},
            "total_ebic": None if self.total_ebic is None else float(self.total_ebic),
            "selected": self.selected,
        }
        if self.hyper is not None:
            out["hyper"] = {
                "p0": self.hyper.p0,
                "v0": self.hyper.v0,
                "v1": self.hyper.v1,
                "tau": "inf" if math.isinf(self.hyper.tau) else self.hyper.tau,
            }
        return out


# ---------------------------------------------------------------------------
# disk layout

def _counts_path(directory, k):
    return os.path.join(directory, f"group_{k}.counts.csv")


def _read_matrix(path: str) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except OSError as e:
        raise DatasetError(f"unreadable file {path}: {e}") from e
    except ValueError as e:
        raise DatasetError(f"malformed CSV {path}: {e}") from e


def load_dataset(directory: str) -> CountDataset:
    """Load, validate and default-fill a dataset directory."""
    groups = []
    k = 1
    while os.path.exists(_counts_path(directory, k)):
        counts = _read_matrix(_counts_path(directory, k))
        n, p = counts.shape
        cov_path = os.path.join(directory, f"group_{k}.covariates.csv")
        off_path = os.path.join(directory, f"group_{k}.offsets.csv")
        covariates = _read_matrix(cov_path) if os.path.exists(cov_path) \
            else np.ones((n, 1))
        offsets = _read_matrix(off_path) if os.path.exists(off_path) \
            else np.zeros((n, p))
        groups.append(GroupData(counts, covariates, offsets))
        k += 1
    if not groups:
        raise DatasetError(f"no group_1.counts.csv under {directory}")
    ds = CountDataset(groups)
    ds.validate()
    return ds


def save_dataset(directory: str, dataset: CountDataset) -> None:
    """Write the dataset back in the directory layout (integer counts)."""
    os.makedirs(directory, exist_ok=True)
    for k, g in enumerate(dataset.groups, start=1):
        np.savetxt(_counts_path(directory, k), g.counts,
                   delimiter=",", fmt="%d")
        np.savetxt(os.path.join(directory, f"group_{k}.covariates.csv"),
                   g.covariates, delimiter=",", fmt="%.17g")
        np.savetxt(os.path.join(directory, f"group_{k}.offsets.csv"),
                   g.offsets, delimiter=",", fmt="%.17g")


def check_positive_definite(omega: np.ndarray, context: str = "") -> None:
    try:
        np.linalg.cholesky(omega)
    except np.linalg.LinAlgError as e:
        msg = "precision matrix is not positive definite"
        if context:
            msg += f" ({context})"
        raise NotPositiveDefiniteError(msg) from e


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def initialize(dataset: CountDataset) -> tuple[ModelState, VariationalState]:
    """Deterministic starting point for the EM loop.

    Variational means start at log(y + 0.5) and variances at 1.1; each
    precision matrix is the inverse of the ridged second-moment matrix of the
    initial means, and coefficients start at zero (the first iteration
    recomputes them before they are used).
    """
    dataset.validate()
    means, variances, omegas, betas = [], [], [], []
    p, d = dataset.p, dataset.d
    for g in dataset.groups:
        mu0 = np.log(g.counts + 0.5)
        means.append(mu0)
        variances.append(np.full_like(mu0, 1.1))
        m = mu0.T @ mu0 / g.n_obs + 0.01 * np.eye(p)
        omega0 = symmetrize(np.linalg.inv(m))
        check_positive_definite(omega0, "initialization")
        omegas.append(omega0)
        betas.append(np.zeros((p, d)))
    return ModelState(omegas, betas), VariationalState(means, variances)
