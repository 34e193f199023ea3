"""Monte Carlo ensembles, (N_s, rho) sweeps and theory comparison."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diffusion import SimulationConfig, SystemModel, derive_seed, run_cells, _check_consistent
from .network import CombinationMatrix, SparsityProfile, Topology, select_sparsity_set
from .theory import MomentEstimates, TheoryReport, estimate_moments, estimate_phi_coefficients

__all__ = [
    "SteadyState",
    "EnsembleResult",
    "SweepCell",
    "SweepResult",
    "PilotResult",
    "extract_steady_state",
    "run_seeds",
    "run_ensemble",
    "run_ensemble_cells",
    "sweep_ns_rho",
    "run_pilot",
    "compare_to_theory",
]

Z95 = 1.959963984540054
SLOPE_LIMIT_DB = 1e-4


@dataclass(frozen=True)
class SteadyState:
    value: float
    slope_db_per_iter: float

    @property
    def converged(self) -> bool:
        return abs(self.slope_db_per_iter) <= SLOPE_LIMIT_DB


def extract_steady_state(trace, steady_window: int, slope_window: int | None = None) -> SteadyState:
    """Mean over the trailing window and the least-squares dB slope.

    The slope is fitted over the trailing `slope_window` samples (default:
    the steady window itself).
    """
    trace = np.asarray(trace, dtype=float)
    slope_window = steady_window if slope_window is None else slope_window
    if min(steady_window, slope_window) < 2:
        raise ValueError("windows must be >= 2")
    if max(steady_window, slope_window) > trace.size:
        raise ValueError(f"window exceeds trace length {trace.size}")
    db = 10.0 * np.log10(trace[-slope_window:])
    slope = np.polyfit(np.arange(slope_window, dtype=float), db, 1)[0]
    return SteadyState(float(trace[-steady_window:].mean()), float(slope))


def slope_window_for(iterations: int, steady_window: int) -> int:
    """Trailing third of the run, never shorter than the steady window."""
    return min(iterations + 1, max(steady_window, iterations // 3))


@dataclass
class EnsembleResult:
    mean_trace: np.ndarray
    steady_msd: float
    run_count: int
    confidence_halfwidth: float
    slope_db_per_iter: float

    @property
    def steady_msd_db(self) -> float:
        return 10.0 * math.log10(self.steady_msd)

    @property
    def converged(self) -> bool:
        return abs(self.slope_db_per_iter) <= SLOPE_LIMIT_DB

    def summary(self) -> dict:
        return {
            "steady_msd": self.steady_msd,
            "steady_msd_db": self.steady_msd_db,
            "ci_halfwidth": self.confidence_halfwidth,
            "runs": self.run_count,
            "slope_db_per_iter": self.slope_db_per_iter,
        }


def run_seeds(master: int, runs: int) -> list[int]:
    return [derive_seed(master, r) for r in range(runs)]


def run_ensemble_cells(model: SystemModel, cmat: CombinationMatrix, rho_rows, config: SimulationConfig,
                       runs: int, workers: int = 1) -> list[EnsembleResult]:
    """Ensembles for several per-node coefficient rows on shared realizations.

    Identical rows are simulated once. Runs may execute in parallel; the
    reduction is an ordered sum over run index, so results do not depend on
    `workers`.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    config.check_stability(model.sigma_u_sq)
    rho_rows = np.atleast_2d(np.asarray(rho_rows, dtype=float))
    unique, inverse = np.unique(rho_rows, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    seeds = run_seeds(config.seed, runs)
    window = config.steady_window

    def one_run(seed):
        msd, _ = run_cells(model, cmat, unique, config.mu, config.iterations, seed)
        return msd

    total = np.zeros((unique.shape[0], config.iterations + 1))
    per_run = np.empty((runs, unique.shape[0]))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for r, msd in enumerate(pool.map(one_run, seeds)):
            total += msd
            per_run[r] = msd[:, -window:].mean(axis=1)
    mean = total / runs

    results = []
    for u in range(unique.shape[0]):
        st = extract_steady_state(mean[u], window, slope_window_for(config.iterations, window))
        half = Z95 * per_run[:, u].std(ddof=1) / math.sqrt(runs) if runs > 1 else 0.0
        results.append(EnsembleResult(mean[u], st.value, runs, float(half), st.slope_db_per_iter))
    return [results[i] for i in inverse]


def run_ensemble(model: SystemModel, topology: Topology, cmat: CombinationMatrix,
                 profile: SparsityProfile, config: SimulationConfig, runs: int,
                 workers: int = 1) -> EnsembleResult:
    _check_consistent(model, topology, cmat, profile)
    return run_ensemble_cells(model, cmat, profile.rho_vector[None, :], config, runs, workers)[0]


@dataclass
class SweepCell:
    n_aware: int
    rho: float
    result: EnsembleResult


@dataclass
class SweepResult:
    cells: list[SweepCell]
    profiles: dict[int, SparsityProfile]
    ns_list: list[int]
    rho_list: list[float]
    metadata: dict = field(default_factory=dict)

    def cell(self, n_aware: int, rho: float) -> EnsembleResult:
        for c in self.cells:
            if c.n_aware == n_aware and c.rho == rho:
                return c.result
        raise KeyError((n_aware, rho))

    def curve_db(self, rho: float) -> np.ndarray:
        return np.array([self.cell(ns, rho).steady_msd_db for ns in self.ns_list])

    def minimizer(self, rho: float) -> tuple[int, float]:
        """(N_s*, min steady MSD in dB) for one rho; ties go to the smaller N_s."""
        curve = self.curve_db(rho)
        i = int(np.argmin(curve))
        return self.ns_list[i], float(curve[i])

    def minimizers(self) -> dict[float, tuple[int, float]]:
        return {rho: self.minimizer(rho) for rho in self.rho_list}


def sweep_ns_rho(model: SystemModel, topology: Topology, cmat: CombinationMatrix, ns_list, rho_list,
                 config: SimulationConfig, runs: int, workers: int = 1, placement_seed: int = 0,
                 search_budget: int = 10**6) -> SweepResult:
    """Steady-state MSD over a grid of aware-node counts and coefficients.

    One placement per N_s is reused for every rho and every cell sees the
    same measurement realizations.
    """
    ns_list = [int(x) for x in ns_list]
    rho_list = [float(x) for x in rho_list]
    if any(not 0 <= ns <= cmat.n for ns in ns_list):
        raise ValueError("ns_list entries must lie in [0, N]")
    if any(r < 0 for r in rho_list):
        raise ValueError("rho_list must be non-negative")
    profiles = {ns: select_sparsity_set(cmat, ns, 0.0, derive_seed(placement_seed, ns), search_budget)
                for ns in ns_list}
    keys = [(ns, rho) for ns in ns_list for rho in rho_list]
    rows = np.array([profiles[ns].with_rho(rho).rho_vector for ns, rho in keys])
    for p in profiles.values():
        _check_consistent(model, topology, cmat, p)
    results = run_ensemble_cells(model, cmat, rows, config, runs, workers)
    cells = [SweepCell(ns, rho, res) for (ns, rho), res in zip(keys, results)]
    return SweepResult(cells, profiles, ns_list, rho_list)


@dataclass
class PilotResult:
    moments: MomentEstimates
    alpha: float
    beta: float


def run_pilot(model: SystemModel, topology: Topology, cmat: CombinationMatrix, profile: SparsityProfile,
              config: SimulationConfig, runs: int = 30, stride: int = 20, workers: int = 1,
              min_samples: int = 30) -> PilotResult:
    """Steady-state moment estimates from an ensemble recorded over the trailing window."""
    _check_consistent(model, topology, cmat, profile)
    seeds = run_seeds(derive_seed(config.seed, 2**31), runs)

    def one_run(seed):
        _, snaps = run_cells(model, cmat, profile.rho_vector[None, :], config.mu, config.iterations,
                             seed, record_window=config.steady_window, record_stride=stride)
        return snaps[0]

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        w = np.stack(list(pool.map(one_run, seeds)))
    signs = np.sign(w)
    dev = model.w0 - w
    moments = estimate_moments(signs, dev, topology, min_samples=min_samples)
    alpha, beta = estimate_phi_coefficients(signs, dev, cmat, config.mu, model.sigma_u_sq)
    return PilotResult(moments, alpha, beta)


def compare_to_theory(sweep: SweepResult, reports: dict[int, TheoryReport],
                      tol_db: float = 1.5) -> list[dict]:
    """Predicted against simulated steady MSD for every grid cell.

    `reports` maps N_s to the theory for that placement size; cells with
    N_s = 0 (no attraction anywhere) are predicted by the floor alone.
    """
    floor = next(iter(reports.values())).msd_floor if reports else math.nan
    rows = []
    for c in sweep.cells:
        if c.n_aware == 0 or c.rho == 0:
            predicted = reports[c.n_aware].msd_floor if c.n_aware in reports else floor
        else:
            predicted = reports[c.n_aware].predicted_msd(c.rho)
        pred_db = 10.0 * math.log10(predicted) if predicted > 0 else -math.inf
        err = abs(pred_db - c.result.steady_msd_db)
        rows.append({
            "ns": c.n_aware,
            "rho": c.rho,
            "predicted_msd": predicted,
            "predicted_db": pred_db,
            "simulated_db": c.result.steady_msd_db,
            "abs_error_db": err,
            "passed": bool(err <= tol_db),
        })
    return rows
