"""Experiment configuration: one strict JSON document, every field defaulted."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .diffusion import SimulationConfig, SystemModel, derive_seed, sparse_system
from .io import config_hash

DEFAULT_RHOS = [2e-6, 4e-6, 6e-6, 1e-5, 2e-5, 4e-5]

# execution-only fields: excluded from the hash so outputs do not depend on them
_EXECUTION_FIELDS = ("workers", "out")

# seed namespaces under the master seed
TOPOLOGY_KEY, SYSTEM_KEY, PLACEMENT_KEY, SIMULATION_KEY = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # network
    n_nodes: int = 30
    radius: float = 0.35
    rule: str = "metropolis"
    network_file: str | None = None
    search_budget: int = 10**6
    # system
    taps: int = 128
    nonzero_taps: int = 1
    tap_value: float = 1.0
    sigma_u_sq: float = 1.0
    sigma_v_sq: float = 1e-4
    # simulation
    mu: float = 6e-3
    iterations: int = 3000
    steady_window: int = 200
    runs: int = 100
    seed: int = 20160325
    # sweep grid; ns_list None means every third count plus N
    ns_list: list[int] | None = None
    rho_list: list[float] = field(default_factory=lambda: list(DEFAULT_RHOS))
    full_scale: bool = False
    # single ensemble
    ensemble_ns: int | None = None
    ensemble_rho: float = 0.0
    # theory
    pilot_runs: int = 30
    pilot_rho: float | None = None
    pilot_stride: int = 20
    moments: dict | None = None
    theory_rho_grid: list[float] | None = None
    theory_tolerance_db: float = 1.5
    compare_theory: bool = False
    validation_tol: float = 1e-12
    # output
    write_traces: bool = False
    workers: int = 1
    out: str = "results"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n_nodes < 1 or self.taps < 1:
            raise ConfigError("n_nodes and taps must be >= 1")
        if not 0 <= self.nonzero_taps <= self.taps:
            raise ConfigError("nonzero_taps must lie in [0, taps]")
        if self.rule not in ("metropolis", "uniform"):
            raise ConfigError(f"rule must be 'metropolis' or 'uniform', got {self.rule!r}")
        if self.radius <= 0 or self.mu <= 0 or self.sigma_u_sq <= 0 or self.sigma_v_sq < 0:
            raise ConfigError("radius, mu, sigma_u_sq must be > 0 and sigma_v_sq >= 0")
        if self.runs < 1 or self.iterations < 1 or self.workers < 1:
            raise ConfigError("runs, iterations and workers must be >= 1")
        if not 2 <= self.steady_window <= self.iterations:
            raise ConfigError("steady_window must lie in [2, iterations]")
        if any(r < 0 for r in self.rho_list) or (self.pilot_rho is not None and self.pilot_rho < 0):
            raise ConfigError("coefficients must be non-negative")
        if any(not 0 <= ns <= self.n_nodes for ns in self.resolved_ns_list()):
            raise ConfigError("ns_list entries must lie in [0, n_nodes]")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.moments is not None and not {"tr_theta", "tr_psi"} <= set(self.moments):
            raise ConfigError("moments needs tr_theta and tr_psi")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(f"malformed config value: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path | None) -> "ExperimentConfig":
        if path is None:
            return cls()
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(doc)

    def updated(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def effective(self) -> "ExperimentConfig":
        """Apply the full-scale switch: 1000 runs over every N_s."""
        if not self.full_scale:
            return self
        return self.updated(runs=1000, ns_list=list(range(self.n_nodes + 1)), full_scale=False)

    def resolved_ns_list(self) -> list[int]:
        if self.ns_list is not None:
            return [int(x) for x in self.ns_list]
        grid = list(range(0, self.n_nodes + 1, 3))
        return grid if grid[-1] == self.n_nodes else grid + [self.n_nodes]

    def provenance(self) -> dict:
        doc = dataclasses.asdict(self)
        for key in _EXECUTION_FIELDS:
            doc.pop(key)
        return doc

    def digest(self) -> str:
        return config_hash(self.provenance())

    def system_model(self) -> SystemModel:
        return sparse_system(self.taps, derive_seed(self.seed, SYSTEM_KEY), self.tap_value,
                             self.nonzero_taps, self.sigma_u_sq, self.sigma_v_sq)

    def simulation(self) -> SimulationConfig:
        return SimulationConfig(self.mu, self.iterations, derive_seed(self.seed, SIMULATION_KEY),
                                self.steady_window)

    @property
    def topology_seed(self) -> int:
        return derive_seed(self.seed, TOPOLOGY_KEY)

    @property
    def placement_seed(self) -> int:
        return derive_seed(self.seed, PLACEMENT_KEY)
