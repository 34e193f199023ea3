"""Network topologies, combination matrices and sparsity-aware node placement.

Node indices are 0-based throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

__all__ = [
    "Topology",
    "CombinationMatrix",
    "SparsityProfile",
    "AssumptionReport",
    "ConnectivityError",
    "generate_geometric_topology",
    "topology_from_edges",
    "build_metropolis",
    "build_uniform",
    "build_combiner",
    "ib_residual",
    "select_sparsity_set",
    "validate_assumption_I",
    "network_to_dict",
    "network_from_dict",
]

STOCHASTIC_TOL = 1e-12
MAX_TOPOLOGY_ATTEMPTS = 1000


class ConnectivityError(RuntimeError):
    """No connected geometric graph was found within the attempt bound."""


@dataclass(frozen=True)
class Topology:
    """Undirected connected graph with closed neighborhoods.

    Attributes
    ----------
    adjacency : ndarray of bool, shape (N, N)
        Symmetric, zero diagonal.
    positions : ndarray, shape (N, 2), optional
        Node coordinates in the unit square.
    """

    adjacency: np.ndarray
    positions: np.ndarray | None = None

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=bool)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError("adjacency must be a non-empty square matrix")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if a.diagonal().any():
            raise ValueError("adjacency must not contain self-edges")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)
        if self.positions is not None:
            p = np.array(self.positions, dtype=float)
            p.setflags(write=False)
            object.__setattr__(self, "positions", p)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @property
    def neighborhoods(self) -> list[list[int]]:
        """Closed neighborhoods, each sorted ascending and containing the node itself."""
        closed = self.adjacency | np.eye(self.n, dtype=bool)
        return [np.flatnonzero(row).tolist() for row in closed]

    @property
    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, k=1))
        return list(zip(i.tolist(), j.tolist()))

    def is_connected(self) -> bool:
        return _is_connected(self.adjacency)


@dataclass(frozen=True)
class CombinationMatrix:
    """Column-stochastic combiner; ``coefficients[l, k]`` weighs node l's estimate at node k."""

    coefficients: np.ndarray
    rule: str
    doubly_stochastic: bool

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @property
    def n(self) -> int:
        return self.coefficients.shape[0]

    def row_sum_deviation(self) -> float:
        return float(np.max(np.abs(self.coefficients.sum(axis=1) - 1.0)))

    def column_sum_deviation(self) -> float:
        return float(np.max(np.abs(self.coefficients.sum(axis=0) - 1.0)))


@dataclass(frozen=True)
class SparsityProfile:
    """Set of sparsity-aware nodes and the per-node zero-attraction coefficients."""

    aware_set: tuple[int, ...]
    n_nodes: int
    rho: float
    ib_residual: float
    rho_vector: np.ndarray = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        s = tuple(sorted(int(i) for i in self.aware_set))
        if len(set(s)) != len(s) or any(i < 0 or i >= self.n_nodes for i in s):
            raise ValueError("aware_set must hold distinct node indices in [0, N)")
        object.__setattr__(self, "aware_set", s)
        r = np.zeros(self.n_nodes)
        r[list(s)] = self.rho
        r.setflags(write=False)
        object.__setattr__(self, "rho_vector", r)

    @property
    def n_aware(self) -> int:
        return len(self.aware_set)

    def with_rho(self, rho: float) -> "SparsityProfile":
        """Same placement, different coefficient."""
        return SparsityProfile(self.aware_set, self.n_nodes, rho, self.ib_residual)

    @classmethod
    def for_set(cls, cmat: CombinationMatrix, aware_set, rho: float) -> "SparsityProfile":
        aware = tuple(sorted(int(i) for i in aware_set))
        return cls(aware, cmat.n, rho, ib_residual(cmat, aware))


@dataclass(frozen=True)
class AssumptionReport:
    row_sum_residual: float
    ib_residual: float
    tol: float

    @property
    def ia_passed(self) -> bool:
        return self.row_sum_residual <= self.tol

    @property
    def ib_passed(self) -> bool:
        return self.ib_residual <= self.tol

    @property
    def passed(self) -> bool:
        return self.ia_passed and self.ib_passed

    def to_dict(self) -> dict:
        return {
            "row_sum_residual": self.row_sum_residual,
            "ib_residual": self.ib_residual,
            "tol": self.tol,
            "ia_passed": self.ia_passed,
            "ib_passed": self.ib_passed,
            "passed": self.passed,
        }


def _is_connected(adjacency: np.ndarray) -> bool:
    if adjacency.shape[0] <= 1:
        return True
    n_comp, _ = connected_components(csr_matrix(adjacency), directed=False)
    return n_comp == 1


def generate_geometric_topology(n: int, radius: float, seed: int,
                                max_attempts: int = MAX_TOPOLOGY_ATTEMPTS) -> Topology:
    """Random geometric graph in the unit square, redrawn until connected.

    Nodes are placed uniformly at random; two nodes are linked when their
    Euclidean distance is at most `radius`.

    Raises
    ------
    ConnectivityError
        If none of the `max_attempts` draws is connected.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if radius <= 0:
        raise ValueError("radius must be > 0")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        pos = rng.uniform(0.0, 1.0, size=(n, 2))
        dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        adj = dist <= radius
        np.fill_diagonal(adj, False)
        if _is_connected(adj):
            return Topology(adj, pos)
    raise ConnectivityError(
        f"no connected graph with N={n}, radius={radius} in {max_attempts} attempts; "
        "the radius is too small for this many nodes"
    )


def topology_from_edges(n: int, edges, positions=None) -> Topology:
    adj = np.zeros((n, n), dtype=bool)
    for i, j in edges:
        adj[i, j] = adj[j, i] = True
    return Topology(adj, positions)


def build_metropolis(topology: Topology) -> CombinationMatrix:
    """Metropolis weights: 1/(1 + max(deg_l, deg_k)) off the diagonal, remainder on it."""
    adj = topology.adjacency
    deg = topology.degrees
    c = np.where(adj, 1.0 / (1.0 + np.maximum(deg[:, None], deg[None, :])), 0.0)
    # fill the diagonal from the column so each column sums to one
    np.fill_diagonal(c, 1.0 - c.sum(axis=0))
    return CombinationMatrix(c, "metropolis", True)


def build_uniform(topology: Topology) -> CombinationMatrix:
    """Uniform averaging over each closed neighborhood (column-stochastic)."""
    closed = topology.adjacency | np.eye(topology.n, dtype=bool)
    c = closed / closed.sum(axis=0, keepdims=True)
    doubly = bool(np.all(np.abs(c.sum(axis=1) - 1.0) <= STOCHASTIC_TOL))
    return CombinationMatrix(c, "uniform", doubly)


def build_combiner(topology: Topology, rule: str) -> CombinationMatrix:
    if rule == "metropolis":
        return build_metropolis(topology)
    if rule == "uniform":
        return build_uniform(topology)
    raise ValueError(f"unknown combination rule {rule!r}")


def ib_residual(cmat: CombinationMatrix, aware_set) -> float:
    """Max over columns of |in-set combiner mass - N_s/N|."""
    c = cmat.coefficients
    idx = np.asarray(sorted(aware_set), dtype=int)
    mass = c[idx].sum(axis=0) if idx.size else np.zeros(c.shape[1])
    return float(np.max(np.abs(mass - idx.size / c.shape[0])))


def _exhaustive_search(c: np.ndarray, n_s: int, chunk: int = 65536):
    n = c.shape[0]
    target = n_s / n
    best_res, best_set = math.inf, None
    combos = itertools.combinations(range(n), n_s)
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.intp)
        if block.size == 0:
            break
        res = np.abs(c[block].sum(axis=1) - target).max(axis=1)
        # first index among near-equal values keeps the lexicographic tie-break
        i = int(np.flatnonzero(res <= res.min() + 1e-14)[0])
        if res[i] < best_res - 1e-14:
            best_res, best_set = float(res[i]), tuple(block[i].tolist())
    return best_set


def _swap_descent(c: np.ndarray, members: np.ndarray, target: float) -> np.ndarray:
    """Best-improvement single swaps on (max deviation, squared deviation)."""
    n = c.shape[0]
    inside = np.zeros(n, dtype=bool)
    inside[members] = True
    mass = c[inside].sum(axis=0)
    dev = mass - target
    score = (np.abs(dev).max(), float(dev @ dev))
    while True:
        ins, outs = np.flatnonzero(inside), np.flatnonzero(~inside)
        cand = mass[None, None, :] - c[ins][:, None, :] + c[outs][None, :, :] - target
        cmax = np.abs(cand).max(axis=2)
        csq = (cand**2).sum(axis=2)
        best = np.lexsort((csq.ravel(), cmax.ravel()))[0]
        a, b = np.unravel_index(best, cmax.shape)
        new = (cmax[a, b], csq[a, b])
        if not (new[0] < score[0] - 1e-15 or (new[0] <= score[0] + 1e-15 and new[1] < score[1] - 1e-15)):
            return ins
        inside[ins[a]], inside[outs[b]] = False, True
        mass = mass - c[ins[a]] + c[outs[b]]
        score = new


def select_sparsity_set(cmat: CombinationMatrix, n_s: int, rho: float, seed: int,
                        budget: int = 10**6, restarts: int = 32) -> SparsityProfile:
    """Choose `n_s` sparsity-aware nodes so every node sees in-set mass close to N_s/N.

    Exhaustive over all subsets when there are at most `budget` of them,
    otherwise seeded random restarts each refined by greedy swaps. Among
    equal residuals the lexicographically smallest set wins.
    """
    n = cmat.n
    if not 0 <= n_s <= n:
        raise ValueError(f"n_s must lie in [0, {n}]")
    if rho < 0:
        raise ValueError("rho must be non-negative")
    c = cmat.coefficients
    if n_s in (0, n):
        return SparsityProfile.for_set(cmat, range(n_s), rho)
    if math.comb(n, n_s) <= budget:
        return SparsityProfile.for_set(cmat, _exhaustive_search(c, n_s), rho)

    rng = np.random.default_rng(seed)
    target = n_s / n
    found = set()
    for _ in range(restarts):
        start = rng.choice(n, size=n_s, replace=False)
        found.add(tuple(sorted(_swap_descent(c, start, target).tolist())))
    residuals = {s: ib_residual(cmat, s) for s in found}
    best_res = min(residuals.values())
    best = min(s for s, r in residuals.items() if r <= best_res + 1e-14)
    return SparsityProfile.for_set(cmat, best, rho)


def validate_assumption_I(cmat: CombinationMatrix, profile: SparsityProfile,
                          tol: float = STOCHASTIC_TOL) -> AssumptionReport:
    if profile.n_nodes != cmat.n:
        raise ValueError("profile was built for a different network size")
    return AssumptionReport(cmat.row_sum_deviation(), ib_residual(cmat, profile.aware_set), tol)


def network_to_dict(topology: Topology, cmat: CombinationMatrix) -> dict:
    return {
        "n": topology.n,
        "edges": [list(e) for e in topology.edges],
        "positions": [] if topology.positions is None else topology.positions.tolist(),
        "rule": cmat.rule,
        "c": cmat.coefficients.tolist(),
    }


def network_from_dict(doc: dict) -> tuple[Topology, CombinationMatrix]:
    n = int(doc["n"])
    positions = doc.get("positions") or None
    topology = topology_from_edges(n, doc["edges"], positions)
    if not topology.is_connected():
        raise ValueError("network document describes a disconnected graph")
    c = np.asarray(doc["c"], dtype=float)
    if c.shape != (n, n):
        raise ValueError("combiner shape does not match node count")
    doubly = bool(np.all(np.abs(c.sum(axis=1) - 1.0) <= STOCHASTIC_TOL))
    return topology, CombinationMatrix(c, doc["rule"], doubly)
