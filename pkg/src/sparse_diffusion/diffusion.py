"""Zero-attracting adapt-then-combine diffusion LMS.

Each node adapts its estimate with an LMS step plus a sign-based pull
toward zero (only at sparsity-aware nodes), then replaces its estimate by
a convex combination of its neighbors' intermediate estimates.

``adapt``/``combine`` are the readable single-step forms. Full runs go
through a compiled kernel that evaluates the same recursion for several
zero-attraction settings against one shared measurement stream.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numba
import numpy as np

from .network import CombinationMatrix, SparsityProfile, Topology

__all__ = [
    "SystemModel",
    "Measurement",
    "NodeState",
    "SimulationConfig",
    "MsdTrace",
    "DivergenceError",
    "sparse_system",
    "derive_seed",
    "node_generator",
    "draw_measurement",
    "draw_stream",
    "adapt",
    "combine",
    "run_cells",
    "run_realization",
]


class DivergenceError(RuntimeError):
    def __init__(self, run_seed: int, iteration: int):
        self.run_seed = run_seed
        self.iteration = iteration
        super().__init__(
            f"estimates became non-finite at iteration {iteration} (run seed {run_seed}); "
            "the step size is probably too large"
        )


@dataclass(frozen=True)
class SystemModel:
    w0: np.ndarray
    sigma_u_sq: float = 1.0
    sigma_v_sq: float = 1e-4

    def __post_init__(self):
        w0 = np.array(self.w0, dtype=float).ravel()
        if w0.size < 1:
            raise ValueError("w0 needs at least one tap")
        if self.sigma_u_sq <= 0:
            raise ValueError("sigma_u_sq must be > 0")
        if self.sigma_v_sq < 0:
            raise ValueError("sigma_v_sq must be >= 0")
        w0.setflags(write=False)
        object.__setattr__(self, "w0", w0)

    @property
    def taps(self) -> int:
        return self.w0.size

    @property
    def nonzeros(self) -> int:
        return int(np.count_nonzero(self.w0))


def sparse_system(taps: int, seed: int, value: float = 1.0, nonzeros: int = 1,
                  sigma_u_sq: float = 1.0, sigma_v_sq: float = 1e-4) -> SystemModel:
    """`nonzeros` taps of size `value` at seeded random positions, zeros elsewhere."""
    rng = np.random.default_rng(seed)
    w0 = np.zeros(taps)
    w0[rng.choice(taps, size=nonzeros, replace=False)] = value
    return SystemModel(w0, sigma_u_sq, sigma_v_sq)


@dataclass(frozen=True)
class Measurement:
    d: float
    u: np.ndarray
    v: float


@dataclass(frozen=True)
class NodeState:
    w: np.ndarray
    intermediate: np.ndarray | None = None


@dataclass(frozen=True)
class SimulationConfig:
    mu: float = 6e-3
    iterations: int = 3000
    seed: int = 0
    steady_window: int = 200

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be > 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.steady_window > max(self.iterations, 1):
            raise ValueError("steady_window cannot exceed iterations")

    def check_stability(self, sigma_u_sq: float) -> None:
        if not 0 < self.mu * sigma_u_sq < 2:
            warnings.warn(f"mu*sigma_u^2 = {self.mu * sigma_u_sq:g} is outside (0, 2); "
                          "the LMS recursion is unstable", RuntimeWarning, stacklevel=2)


@dataclass(frozen=True)
class MsdTrace:
    values: np.ndarray
    run_seed: int


def derive_seed(master: int, *key: int) -> int:
    """Independent 64-bit child seed of `master` addressed by `key`."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def node_generator(run_seed: int, node: int) -> np.random.Generator:
    """Counter-based stream for one node of one realization."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(run_seed), spawn_key=(int(node),))))


def draw_measurement(model: SystemModel, rng: np.random.Generator) -> Measurement:
    u = np.sqrt(model.sigma_u_sq) * rng.standard_normal(model.taps)
    v = float(np.sqrt(model.sigma_v_sq) * rng.standard_normal())
    return Measurement(float(u @ model.w0) + v, u, v)


def draw_stream(model: SystemModel, n_nodes: int, iterations: int, run_seed: int):
    """Regressors (T, N, M) and noise (T, N) for a whole realization.

    Node k reads its own stream: all T regressors first, then T noise samples.
    """
    m = model.taps
    u = np.empty((iterations, n_nodes, m))
    v = np.empty((iterations, n_nodes))
    su, sv = np.sqrt(model.sigma_u_sq), np.sqrt(model.sigma_v_sq)
    for k in range(n_nodes):
        g = node_generator(run_seed, k)
        u[:, k, :] = g.standard_normal((iterations, m))
        v[:, k] = g.standard_normal(iterations)
    u *= su
    v *= sv
    return u, v


def adapt(state: NodeState, m: Measurement, mu: float, rho_k: float) -> NodeState:
    """One LMS step with zero attraction; sgn(0) = 0."""
    e = m.d - state.w @ m.u
    inter = state.w + mu * m.u * e - rho_k * np.sign(state.w)
    return NodeState(state.w, inter)


def combine(states: list[NodeState], cmat: CombinationMatrix) -> list[NodeState]:
    """w_k <- sum over j in the closed neighborhood of c[j, k] * intermediate_j."""
    c = cmat.coefficients
    if len(states) != c.shape[0]:
        raise ValueError(f"{len(states)} states for a {c.shape[0]}-node combiner")
    if any(s.intermediate is None for s in states):
        raise ValueError("combine called before every node adapted")
    m = states[0].intermediate.shape
    if any(s.intermediate.shape != m for s in states):
        raise ValueError("intermediate estimates differ in length")
    out = []
    for k in range(c.shape[0]):
        acc = np.zeros(m)
        for j in np.flatnonzero(c[:, k]):
            acc = acc + c[j, k] * states[j].intermediate
        out.append(NodeState(acc))
    return out


def _column_lists(cmat: CombinationMatrix):
    c = cmat.coefficients
    ptr, idx, wts = [0], [], []
    for k in range(c.shape[1]):
        nz = np.flatnonzero(c[:, k])
        idx.extend(nz.tolist())
        wts.extend(c[nz, k].tolist())
        ptr.append(len(idx))
    return np.array(ptr, dtype=np.int64), np.array(idx, dtype=np.int64), np.array(wts)


@numba.njit(nogil=True, cache=True)
def _za_atc_kernel(u, v, w0, ptr, idx, wts, rho, mu, slot, n_slots):
    t_max, n, m = u.shape
    cells = rho.shape[0]
    msd = np.full((cells, t_max + 1), np.nan)
    snaps = np.zeros((cells, n_slots, n, m))
    failed = np.full(cells, -1, dtype=np.int64)

    d = np.empty((t_max, n))
    for t in range(t_max):
        for k in range(n):
            s = 0.0
            for i in range(m):
                s += u[t, k, i] * w0[i]
            d[t, k] = s + v[t, k]
    e0 = 0.0
    for i in range(m):
        e0 += w0[i] * w0[i]

    w = np.empty((n, m))
    inter = np.empty((n, m))
    for c in range(cells):
        w[:, :] = 0.0
        msd[c, 0] = e0
        if slot[0] >= 0:
            snaps[c, slot[0]] = w
        for t in range(t_max):
            for k in range(n):
                s = 0.0
                for i in range(m):
                    s += w[k, i] * u[t, k, i]
                step = mu * (d[t, k] - s)
                r = rho[c, k]
                for i in range(m):
                    x = w[k, i]
                    if x > 0.0:
                        za = r
                    elif x < 0.0:
                        za = -r
                    else:
                        za = 0.0
                    inter[k, i] = x + step * u[t, k, i] - za
            acc = 0.0
            for k in range(n):
                for i in range(m):
                    w[k, i] = 0.0
                for p in range(ptr[k], ptr[k + 1]):
                    j = idx[p]
                    cw = wts[p]
                    for i in range(m):
                        w[k, i] += cw * inter[j, i]
                for i in range(m):
                    dev = w0[i] - w[k, i]
                    acc += dev * dev
            val = acc / n
            if not np.isfinite(val):
                failed[c] = t + 1
                break
            msd[c, t + 1] = val
            if slot[t + 1] >= 0:
                snaps[c, slot[t + 1]] = w
    return msd, snaps, failed


def run_cells(model: SystemModel, cmat: CombinationMatrix, rho_rows, mu: float,
              iterations: int, run_seed: int, record_window: int = 0, record_stride: int = 1):
    """Simulate one realization for each row of per-node coefficients `rho_rows`.

    All rows see the same regressors and noise (common random numbers).
    With `record_window` > 0 the network state is kept at every
    `record_stride`-th iteration among the last `record_window`, always
    including the final one.

    Returns
    -------
    msd : ndarray, shape (rows, iterations + 1)
    snapshots : ndarray, shape (rows, S, N, M)
    """
    rho_rows = np.atleast_2d(np.asarray(rho_rows, dtype=float))
    n = cmat.n
    if rho_rows.shape[1] != n:
        raise ValueError("each rho row needs one entry per node")
    u, v = draw_stream(model, n, iterations, run_seed)
    slot = np.full(iterations + 1, -1, dtype=np.int64)
    recorded = [it for it in range(iterations, max(iterations - record_window, -1), -1)
                if (iterations - it) % record_stride == 0] if record_window > 0 else []
    for s, it in enumerate(sorted(recorded)):
        slot[it] = s
    ptr, idx, wts = _column_lists(cmat)
    msd, snaps, failed = _za_atc_kernel(u, v, model.w0, ptr, idx, wts, rho_rows, float(mu),
                                        slot, len(recorded))
    bad = failed[failed >= 0]
    if bad.size:
        raise DivergenceError(run_seed, int(bad.min()))
    return msd, snaps


def _check_consistent(model: SystemModel, topology: Topology, cmat: CombinationMatrix,
                      profile: SparsityProfile) -> None:
    if not (topology.n == cmat.n == profile.n_nodes):
        raise ValueError("topology, combiner and profile disagree on N")
    closed = topology.adjacency | np.eye(topology.n, dtype=bool)
    if np.any((cmat.coefficients != 0) & ~closed):
        raise ValueError("combiner has weight outside the closed neighborhoods")


def run_realization(model: SystemModel, topology: Topology, cmat: CombinationMatrix,
                    profile: SparsityProfile, config: SimulationConfig) -> MsdTrace:
    """One realization from zero initial estimates; network MSD at every iteration."""
    _check_consistent(model, topology, cmat, profile)
    config.check_stability(model.sigma_u_sq)
    msd, _ = run_cells(model, cmat, profile.rho_vector[None, :], config.mu,
                       config.iterations, config.seed)
    return MsdTrace(msd[0], config.seed)


def with_seed(config: SimulationConfig, seed: int) -> SimulationConfig:
    return replace(config, seed=seed)
