"""Synthetic multi-group networks, precision matrices and count data.

Graph families:

* ``er_shared`` — a shared Erdos-Renyi backbone with inclusion probability
  0.1/s masked elementwise by per-group ER graphs with probability s, so the
  marginal edge density is 0.1 regardless of the similarity parameter s.
* ``blocked`` — 5 equal node blocks, within-block edges with probability 0.8,
  no cross-block edges; independent across groups.
* ``hub`` — 10% of nodes are hubs; every pair touching a hub is an edge with
  probability 0.8; independent across groups.
* ``scale_free`` — shared Barabasi-Albert graph (attachment p/8) masked by
  per-group BA graphs (attachment p/2).
* ``small_world`` — shared Watts-Strogatz ring (mean degree p/5, rewiring
  0.5) masked by per-group WS graphs (mean degree p/4, rewiring 0.5).

Precision matrices follow (A + I) .* B + eps*I with eps chosen to leave the
smallest eigenvalue at the 0.01 ridge. Counts come from the Poisson
log-normal two-step sampler, or the multinomial misspecification sampler.
All randomness flows from one master seed through spawned child streams
(shared graph first, then group k = 1..K), so outputs are reproducible and
independent of scheduling.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .datasets import CountDataset, GroupData

KINDS = ("er_shared", "blocked", "hub", "scale_free", "small_world")

LATENT_CLAMP = 30.0  # exp(30) ~ 1e13 keeps Poisson sampling finite


@dataclass
class GraphSpec:
    kind: str
    p: int
    n_groups: int
    s: float
    n_blocks: int = 5
    within_block_prob: float = 0.8
    hub_fraction: float = 0.1
    hub_attach_prob: float = 0.8
    ba_shared_m: Optional[int] = None   # default round(p/8)
    ba_group_m: Optional[int] = None    # default round(p/2)
    ws_shared_degree: Optional[int] = None  # default p/5, rounded to even
    ws_group_degree: Optional[int] = None   # default p/4, rounded to even
    ws_rewire: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.p < 2:
            raise ValueError("p must be >= 2")
        if self.n_groups < 1:
            raise ValueError("need at least one group")
        if self.kind == "er_shared":
            if not 0.1 < self.s < 1.0:
                raise ValueError(
                    f"er_shared needs s in (0.1, 1), got {self.s}"
                )
        elif not 0.0 < self.s < 1.0:
            raise ValueError(f"s must be in (0, 1), got {self.s}")


@dataclass
class PrecisionSpec:
    """Value distribution for nonzero precision entries.

    Defaults follow the shared-backbone ER protocol; ``various()`` gives the
    stronger-signal variant used with the structured graph families, where
    off-diagonal draws are scaled by the signal strength.
    """

    diag_range: tuple[float, float] = (0.8, 1.2)
    offdiag_range: tuple[float, float] = (0.2, 0.5)
    strength: float = 1.0
    ridge: float = 0.01

    def __post_init__(self):
        if self.offdiag_range[0] <= 0:
            raise ValueError("offdiag_range must exclude zero")

    @classmethod
    def various(cls, strength: float) -> "PrecisionSpec":
        return cls(diag_range=(1.0, 1.5), offdiag_range=(0.3, 0.8),
                   strength=strength)


def _er_graph(p: int, prob: float, rng) -> np.ndarray:
    a = np.zeros((p, p), dtype=np.int8)
    iu, ju = np.triu_indices(p, k=1)
    hit = rng.random(iu.size) < prob
    a[iu[hit], ju[hit]] = 1
    return a | a.T


def _barabasi_albert(p: int, m: int, rng) -> np.ndarray:
    """Preferential attachment: each new node links to m distinct existing
    nodes chosen proportionally to degree (classic repeated-nodes scheme)."""
    m = max(1, min(int(m), p - 1))
    a = np.zeros((p, p), dtype=np.int8)
    repeated: list[int] = []
    targets = list(range(m))
    for new in range(m, p):
        for t in targets:
            a[new, t] = a[t, new] = 1
        repeated.extend(targets)
        repeated.extend([new] * m)
        chosen: set[int] = set()
        while len(chosen) < m:
            chosen.add(repeated[int(rng.integers(len(repeated)))])
        targets = sorted(chosen)
    return a


def _watts_strogatz(p: int, degree: int, rewire: float, rng) -> np.ndarray:
    """Ring lattice with even degree, then rewire each lattice edge with the
    given probability to a uniform non-duplicate endpoint."""
    k = 2 * max(1, round(degree / 2.0))
    if k >= p:
        k = p - 1 if (p - 1) % 2 == 0 else p - 2
    a = np.zeros((p, p), dtype=np.int8)
    for j in range(1, k // 2 + 1):
        for u in range(p):
            v = (u + j) % p
            a[u, v] = a[v, u] = 1
    for j in range(1, k // 2 + 1):
        for u in range(p):
            if rng.random() >= rewire:
                continue
            v = (u + j) % p
            if np.count_nonzero(a[u]) >= p - 1:
                continue  # node saturated, keep the lattice edge
            w = int(rng.integers(p))
            while w == u or a[u, w]:
                w = int(rng.integers(p))
            a[u, v] = a[v, u] = 0
            a[u, w] = a[w, u] = 1
    return a


def _blocked_graph(spec: GraphSpec, rng) -> np.ndarray:
    blocks = np.array_split(np.arange(spec.p), spec.n_blocks)
    a = np.zeros((spec.p, spec.p), dtype=np.int8)
    for block in blocks:
        for ii, i in enumerate(block):
            for j in block[ii + 1:]:
                if rng.random() < spec.within_block_prob:
                    a[i, j] = a[j, i] = 1
    return a


def _hub_graph(spec: GraphSpec, rng) -> np.ndarray:
    n_hubs = max(1, round(spec.hub_fraction * spec.p))
    a = np.zeros((spec.p, spec.p), dtype=np.int8)
    for i in range(spec.p):
        for j in range(i + 1, spec.p):
            if i < n_hubs or j < n_hubs:
                if rng.random() < spec.hub_attach_prob:
                    a[i, j] = a[j, i] = 1
    return a


def gen_adjacency(spec: GraphSpec, seed: int) -> list[np.ndarray]:
    """K binary symmetric zero-diagonal adjacency matrices."""
    ss = np.random.SeedSequence(seed)
    shared_ss, *group_ss = ss.spawn(spec.n_groups + 1)
    p = spec.p

    if spec.kind == "er_shared":
        shared = _er_graph(p, 0.1 / spec.s, np.random.default_rng(shared_ss))
        return [shared * _er_graph(p, spec.s, np.random.default_rng(g))
                for g in group_ss]
    if spec.kind == "scale_free":
        m_shared = spec.ba_shared_m if spec.ba_shared_m is not None \
            else round(p / 8.0)
        m_group = spec.ba_group_m if spec.ba_group_m is not None \
            else round(p / 2.0)
        shared = _barabasi_albert(p, m_shared,
                                  np.random.default_rng(shared_ss))
        return [shared * _barabasi_albert(p, m_group, np.random.default_rng(g))
                for g in group_ss]
    if spec.kind == "small_world":
        deg_shared = spec.ws_shared_degree if spec.ws_shared_degree is not None \
            else p / 5.0
        deg_group = spec.ws_group_degree if spec.ws_group_degree is not None \
            else p / 4.0
        shared = _watts_strogatz(p, deg_shared, spec.ws_rewire,
                                 np.random.default_rng(shared_ss))
        return [
            shared * _watts_strogatz(p, deg_group, spec.ws_rewire,
                                     np.random.default_rng(g))
            for g in group_ss
        ]
    if spec.kind == "blocked":
        return [_blocked_graph(spec, np.random.default_rng(g))
                for g in group_ss]
    if spec.kind == "hub":
        return [_hub_graph(spec, np.random.default_rng(g)) for g in group_ss]
    raise ValueError(f"unknown kind {spec.kind!r}")


def precision_from_adjacency(adjacency: np.ndarray, pspec: PrecisionSpec,
                             rng) -> np.ndarray:
    """(A + I) .* B + eps*I with eps = max(-lambda_min, 0) + ridge.

    Draw order (fixed for reproducibility): diagonal values, then upper
    triangle magnitudes, then signs.
    """
    rng = np.random.default_rng(rng)
    a = np.asarray(adjacency)
    p = a.shape[0]
    diag = rng.uniform(pspec.diag_range[0], pspec.diag_range[1], size=p)
    iu, ju = np.triu_indices(p, k=1)
    mag = rng.uniform(pspec.offdiag_range[0], pspec.offdiag_range[1],
                      size=iu.size)
    sign = np.where(rng.random(iu.size) < 0.5, -1.0, 1.0)

    m = np.zeros((p, p))
    vals = sign * mag * pspec.strength * a[iu, ju]
    m[iu, ju] = vals
    m[ju, iu] = vals
    np.fill_diagonal(m, diag)

    eps = max(-float(np.linalg.eigvalsh(m)[0]), 0.0) + pspec.ridge
    return m + eps * np.eye(p)


def sample_pln(omega: np.ndarray, beta: np.ndarray, n: int, rng,
               offsets: Optional[np.ndarray] = None,
               ) -> tuple[GroupData, np.ndarray]:
    """Two-step sampler: latent rows X ~ N(o + z beta^T, omega^-1), then
    y_ij ~ Poisson(exp(X_ij)). Covariates are i.i.d. standard normal.

    Returns the group plus the latent matrix (kept for tests). Latent values
    above the clamp are truncated and reported through a warning.
    """
    rng = np.random.default_rng(rng)
    p = omega.shape[0]
    d = beta.shape[1]
    z = rng.standard_normal((n, d))
    o = np.zeros((n, p)) if offsets is None else np.asarray(offsets, float)
    lam = o + z @ beta.T
    cov = np.linalg.inv(omega)
    chol = np.linalg.cholesky(cov)
    x = lam + rng.standard_normal((n, p)) @ chol.T
    clamped = int(np.count_nonzero(x > LATENT_CLAMP))
    if clamped:
        warnings.warn(
            f"clamped {clamped} latent values at {LATENT_CLAMP}",
            RuntimeWarning, stacklevel=2,
        )
        x = np.minimum(x, LATENT_CLAMP)
    y = rng.poisson(np.exp(x)).astype(float)
    return GroupData(counts=y, covariates=z, offsets=o), x


def sample_multinomial_misspec(omega: np.ndarray, beta: np.ndarray, n: int,
                               rng, offsets: Optional[np.ndarray] = None,
                               ) -> tuple[GroupData, np.ndarray]:
    """Misspecified sampler: same latent draw, then row-softmax probabilities
    and y_i ~ Multinomial(2p, q_i) so every row sums to exactly 2p."""
    rng = np.random.default_rng(rng)
    p = omega.shape[0]
    group, x = sample_pln(omega, beta, n, rng, offsets=offsets)
    shift = x - x.max(axis=1, keepdims=True)
    q = np.exp(shift)
    q /= q.sum(axis=1, keepdims=True)
    y = np.empty((n, p))
    for i in range(n):
        y[i] = rng.multinomial(2 * p, q[i])
    return GroupData(counts=y, covariates=group.covariates,
                     offsets=group.offsets), x


@dataclass
class SimulationResult:
    dataset: CountDataset
    omegas: list[np.ndarray] = field(default_factory=list)
    adjacencies: list[np.ndarray] = field(default_factory=list)


def simulate_dataset(spec: GraphSpec, n: int, seed: int, d: int = 1,
                     family: str = "pln",
                     pspec: Optional[PrecisionSpec] = None,
                     ) -> SimulationResult:
    """End-to-end generation: graphs, precision matrices, coefficients and
    counts for every group.

    ``family`` is ``pln`` or ``multinomial``. The default value distribution
    matches the graph family: the shared-ER protocol for ``er_shared`` and
    the strong-signal variant (scaled by s) for the structured families.
    """
    if family not in ("pln", "multinomial"):
        raise ValueError(f"family must be pln or multinomial, got {family!r}")
    if pspec is None:
        pspec = PrecisionSpec() if spec.kind == "er_shared" \
            else PrecisionSpec.various(spec.s)

    adjacencies = gen_adjacency(spec, seed)
    ss = np.random.SeedSequence((seed, 1))  # independent of the graph streams
    group_ss = ss.spawn(spec.n_groups)
    sampler = sample_pln if family == "pln" else sample_multinomial_misspec

    groups, omegas = [], []
    for adjacency, gss in zip(adjacencies, group_ss):
        rng = np.random.default_rng(gss)
        omega = precision_from_adjacency(adjacency, pspec, rng)
        beta = rng.standard_normal((spec.p, d))
        group, _ = sampler(omega, beta, n, rng)
        groups.append(group)
        omegas.append(omega)
    ds = CountDataset(groups)
    ds.validate()
    return SimulationResult(dataset=ds, omegas=omegas,
                            adjacencies=adjacencies)


def write_truth(directory: str, omegas: list[np.ndarray],
                threshold: float = 1e-8) -> None:
    """truth_omega_<k>.csv and truth_edges_<k>.tsv (1-based upper triangle)."""
    os.makedirs(directory, exist_ok=True)
    for k, omega in enumerate(omegas, start=1):
        np.savetxt(os.path.join(directory, f"truth_omega_{k}.csv"),
                   omega, delimiter=",", fmt="%.17g")
        path = os.path.join(directory, f"truth_edges_{k}.tsv")
        with open(path, "w") as fh:
            p = omega.shape[0]
            for i in range(p):
                for j in range(i + 1, p):
                    if abs(omega[i, j]) > threshold:
                        fh.write(f"{i + 1}\t{j + 1}\t{omega[i, j]:.17g}\n")
