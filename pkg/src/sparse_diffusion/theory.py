"""Closed-form steady-state analysis of (heterogeneous) zero-attracting diffusion.

The steady-state network MSD splits into a floor that plain diffusion LMS
reaches and an excess ``phi(rho)`` caused by zero attraction. The floor is
evaluated exactly without forming the (MN)^2-sized Kronecker system;
``phi`` depends on steady-state sign/deviation moments estimated from
pilot simulations.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .network import CombinationMatrix, Topology

__all__ = [
    "StabilityError",
    "check_stability",
    "TheoryContext",
    "MomentEstimates",
    "TheoryReport",
    "msd_floor_structured",
    "msd_floor_oracle",
    "overlap_pairs",
    "estimate_moments",
    "estimate_phi_coefficients",
    "rho_opt_homogeneous",
    "rho_opt_heterogeneous",
    "phi_coefficients_heterogeneous",
    "phi_curve",
]

ORACLE_MAX_MN = 12
SERIES_RTOL = 1e-14
SERIES_MAX_TERMS = 10**6


class StabilityError(ValueError):
    """The contraction factor is not below one (requires 0 < mu*sigma_u^2 < 2)."""


def check_stability(mu: float, sigma_u_sq: float) -> None:
    if not 0.0 < mu * sigma_u_sq < 2.0:
        raise StabilityError(f"mu*sigma_u^2 = {mu * sigma_u_sq:g} is outside (0, 2); "
                             "the steady-state series diverges")


@dataclass(frozen=True)
class TheoryContext:
    cmat: CombinationMatrix
    taps: int
    mu: float
    sigma_u_sq: float
    sigma_v_sq: float

    @property
    def contraction(self) -> float:
        """1 - 2 mu sigma_u^2 + mu^2 sigma_u^4, i.e. (1 - mu sigma_u^2)^2."""
        return 1.0 - 2.0 * self.mu * self.sigma_u_sq + self.mu**2 * self.sigma_u_sq**2

    def check(self) -> None:
        check_stability(self.mu, self.sigma_u_sq)

    @property
    def noise_gain(self) -> float:
        return self.mu**2 * self.sigma_v_sq * self.sigma_u_sq


def msd_floor_structured(ctx: TheoryContext, n: int | None = None) -> float:
    """Steady-state network MSD of plain ATC diffusion LMS.

    Uses ``(C kron C)^k vec(I) = vec(C^k C^kT)`` and the trace over the
    identity factor of ``C' kron I_M``. Symmetric combiners are summed in
    closed form over eigenvalues, others by a truncated series.
    """
    ctx.check()
    c = ctx.cmat.coefficients
    n = c.shape[0] if n is None else n
    if ctx.sigma_v_sq == 0:
        return 0.0
    s = ctx.contraction
    scale = ctx.noise_gain * ctx.taps / n
    if np.array_equal(c, c.T):
        lam2 = np.linalg.eigvalsh(c) ** 2
        return float(scale * np.sum(lam2 / (1.0 - s * lam2)))

    ctc = c.T @ c
    p = np.eye(c.shape[0])  # C'^k C'^kT
    total = 0.0
    weight = 1.0
    for _ in range(SERIES_MAX_TERMS):
        term = weight * float(np.sum(ctc * p))
        total += term
        if abs(term) < SERIES_RTOL * abs(total):
            break
        p = c @ p @ c.T
        weight *= s
    else:
        raise StabilityError("floor series did not converge")
    return float(scale * total)


def msd_floor_oracle(ctx: TheoryContext, n: int | None = None) -> float:
    """Dense evaluation of the floor by solving the full (MN)^2 linear system.

    Only meant for tiny networks (M*N <= 12) as a cross-check.
    """
    ctx.check()
    c1 = ctx.cmat.coefficients
    n = c1.shape[0] if n is None else n
    mn = c1.shape[0] * ctx.taps
    if mn > ORACLE_MAX_MN:
        raise ValueError(f"dense oracle limited to M*N <= {ORACLE_MAX_MN}, got {mn}")
    c = np.kron(c1, np.eye(ctx.taps))
    f = ctx.contraction * np.kron(c, c)
    q = np.eye(mn).reshape(-1, order="F")
    x = np.linalg.solve(np.eye(mn * mn) - f, q)
    return float(ctx.noise_gain / n * ((c.T @ c).reshape(-1, order="F") @ x))


@dataclass(frozen=True)
class MomentEstimates:
    tr_theta: float
    tr_psi: float
    sample_count: int
    tr_theta_se: float
    tr_psi_se: float
    self_tr_psi: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def overlap_pairs(topology: Topology) -> np.ndarray:
    """Boolean (N, N) mask of node pairs whose closed neighborhoods overlap (<= 2 hops)."""
    closed = (topology.adjacency | np.eye(topology.n, dtype=bool)).astype(np.int64)
    return (closed @ closed) > 0


def _as_samples(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 3:
        a = a[:, None]
    if a.ndim != 4:
        raise ValueError("expected shape (runs, N, M) or (runs, snapshots, N, M)")
    return a


def _pair_products(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample inner products x_i . y_m, shape (runs, snapshots, N, N)."""
    return np.einsum("rsim,rsjm->rsij", x, y, optimize=True)


def _standard_error(a: np.ndarray) -> float:
    return float(a.std(ddof=1) / np.sqrt(a.size)) if a.size > 1 else 0.0


def estimate_moments(signs, deviations, topology: Topology, min_samples: int = 30) -> MomentEstimates:
    """Traces of the steady-state sign/deviation cross-moments.

    ``tr_theta`` averages sgn(w_i) . w~_m and ``tr_psi`` averages
    sgn(w_i) . sgn(w_m) over every node pair with overlapping
    neighborhoods and over all samples. Standard errors come from the
    spread of per-run averages.

    Parameters
    ----------
    signs, deviations : array_like, shape (runs, N, M) or (runs, snapshots, N, M)
        sgn(w_k) and w0 - w_k at steady state.
    """
    sg = _as_samples(signs)
    dev = _as_samples(deviations)
    if sg.shape != dev.shape:
        raise ValueError("signs and deviations differ in shape")
    runs = sg.shape[0]
    if runs < min_samples:
        raise ValueError(f"need at least {min_samples} runs, got {runs}")
    if sg.shape[2] != topology.n:
        raise ValueError("sample node count differs from topology")
    mask = overlap_pairs(topology)
    theta_pairs = _pair_products(sg, dev)
    psi_pairs = _pair_products(sg, sg)
    theta_run = theta_pairs[..., mask].mean(axis=(1, 2))
    psi_run = psi_pairs[..., mask].mean(axis=(1, 2))

    # self pairs against cross pairs: a gap points at a violated equal-moment assumption
    diag = np.eye(topology.n, dtype=bool)
    cross = mask & ~diag
    if cross.any():
        for name, pairs in (("theta", theta_pairs), ("psi", psi_pairs)):
            gap = pairs[..., diag].mean(axis=(1, 2)) - pairs[..., cross].mean(axis=(1, 2))
            spread = gap.std(ddof=1) / np.sqrt(runs)
            if abs(gap.mean()) > 3 * spread and spread > 0:
                warnings.warn(f"self and cross-pair {name} estimates differ by "
                              f"{abs(gap.mean()) / spread:.1f} standard errors; the network "
                              "does not show uniform steady-state moments", RuntimeWarning,
                              stacklevel=2)

    return MomentEstimates(
        tr_theta=float(theta_run.mean()),
        tr_psi=float(psi_run.mean()),
        sample_count=runs,
        tr_theta_se=_standard_error(theta_run),
        tr_psi_se=_standard_error(psi_run),
        self_tr_psi=float(psi_pairs[..., diag].mean()),
    )


def estimate_phi_coefficients(signs, deviations, cmat: CombinationMatrix, mu: float,
                              sigma_u_sq: float) -> tuple[float, float]:
    """Sample estimates of the homogeneous linear/quadratic excess coefficients.

    alpha' = -2 mu (1 - mu sigma_u^2) E[sgn(w)^T (C'C'^T kron I) w~],
    beta'  = mu^2 E[sgn(w)^T (C'C'^T kron I) sgn(w)].
    """
    sg = _as_samples(signs)
    dev = _as_samples(deviations)
    k = cmat.coefficients @ cmat.coefficients.T
    a = np.einsum("ij,rsij->rs", k, _pair_products(sg, dev)).mean()
    b = np.einsum("ij,rsij->rs", k, _pair_products(sg, sg)).mean()
    return float(-2.0 * mu * (1.0 - mu * sigma_u_sq) * a), float(mu**2 * b)


def rho_opt_homogeneous(alpha: float, beta: float, n: int) -> tuple[float, float]:
    """Vertex of the excess parabola when every node attracts to zero.

    Returns ``(rho_opt, phi_min)``; a non-positive linear coefficient means
    attraction cannot help, giving ``(0, 0)``.
    """
    if not beta > 0:
        raise ValueError("quadratic coefficient must be positive; the moment estimate is broken")
    rho = max(0.0, alpha / (2.0 * beta))
    if rho == 0.0:
        return 0.0, 0.0
    return rho, -alpha**2 / (4.0 * n * beta)


def _require_aware(n_s: int, tr_psi: float) -> None:
    if n_s < 1:
        raise ValueError("n_s must be >= 1; with no sparsity-aware node the excess is identically zero")
    if not tr_psi > 0:
        raise ValueError("sign cross-moment trace must be positive")


def rho_opt_heterogeneous(m: MomentEstimates, mu: float, sigma_u_sq: float, n: int,
                          n_s: int) -> tuple[float, float]:
    """Optimal coefficient and minimum excess with `n_s` of `n` nodes attracting.

    ``rho_opt`` scales as 1/n_s while ``phi_min`` does not depend on n_s.
    """
    _require_aware(n_s, m.tr_psi)
    g = 1.0 - mu * sigma_u_sq
    scaled = -g * m.tr_theta * n / (mu * m.tr_psi)
    if scaled <= 0:
        return 0.0, 0.0
    return scaled / n_s, -(g**2) * m.tr_theta**2 / m.tr_psi


def phi_coefficients_heterogeneous(m: MomentEstimates, mu: float, sigma_u_sq: float, n: int,
                                   n_s: int) -> tuple[float, float]:
    """``(a, b)`` with phi(rho) = -a rho + b rho^2."""
    a = -2.0 * mu * (1.0 - mu * sigma_u_sq) * m.tr_theta * n_s / n
    b = mu**2 * m.tr_psi * n_s**2 / n**2
    return a, b


def phi_curve(m: MomentEstimates, mu: float, sigma_u_sq: float, n: int, n_s: int,
              rho_grid) -> np.ndarray:
    rho = np.asarray(rho_grid, dtype=float)
    if np.any(rho < 0):
        raise ValueError("rho grid must be non-negative")
    alpha1 = -2.0 * rho * mu * (1.0 - mu * sigma_u_sq) * m.tr_theta * n_s
    beta1 = mu**2 * rho**2 * m.tr_psi * n_s**2 / n
    return (beta1 - alpha1) / n


@dataclass
class TheoryReport:
    msd_floor: float
    phi_coefficients: tuple[float, float]
    rho_opt: float
    phi_min: float
    regime: str
    n_aware: int

    @property
    def predicted_min_msd(self) -> float:
        return self.msd_floor + self.phi_min

    def predicted_msd(self, rho: float) -> float:
        a, b = self.phi_coefficients
        return self.msd_floor - a * rho + b * rho**2

    def to_dict(self) -> dict:
        return {
            "msd_floor": self.msd_floor,
            "phi_coefficients": list(self.phi_coefficients),
            "rho_opt": self.rho_opt,
            "phi_min": self.phi_min,
            "predicted_min_msd": self.predicted_min_msd,
            "regime": self.regime,
            "n_aware": self.n_aware,
        }

    @classmethod
    def heterogeneous(cls, floor: float, m: MomentEstimates, mu: float, sigma_u_sq: float,
                      n: int, n_s: int) -> "TheoryReport":
        coeffs = phi_coefficients_heterogeneous(m, mu, sigma_u_sq, n, n_s)
        rho, phi = rho_opt_heterogeneous(m, mu, sigma_u_sq, n, n_s)
        return cls(floor, coeffs, rho, phi, "homogeneous" if n_s == n else "heterogeneous", n_s)
