"""Discrete probability measures on a uniform grid of [0, L] and flows of them.

A measure is a weight vector over the nodes ``x_j = j * dx``; a flow stacks
one such vector per time stamp ``t_m = m * dt``.  Distances are W1, computed
from the closed form ``int |F - F'| dx`` of the cumulative weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError

ROW_TOL = 1e-12
CFL_SAFETY = 0.99


@dataclass(frozen=True)
class GridSpec:
    """Uniform space-time lattice on [0, T] x [0, L]."""

    J: int
    M: int
    L: float
    T: float

    def __post_init__(self):
        if self.J < 1 or self.M < 1:
            raise ConfigurationError(f"grid needs J >= 1 and M >= 1, got J={self.J}, M={self.M}")
        if not (self.L > 0 and self.T > 0):
            raise ConfigurationError("grid needs L > 0 and T > 0")

    @property
    def dx(self) -> float:
        return self.L / self.J

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.J + 1) * self.dx

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.dt

    def max_stable_dt(self, sigma: float, drift_bound: float) -> float:
        return self.dx**2 / (sigma**2 + drift_bound * self.dx)

    def cfl_ok(self, sigma: float, drift_bound: float) -> bool:
        # relative slack absorbs the rounding in T / M
        return self.dt <= self.max_stable_dt(sigma, drift_bound) * (1 + 1e-12)

    def check_cfl(self, sigma: float, drift_bound: float) -> None:
        if not self.cfl_ok(sigma, drift_bound):
            raise ConfigurationError(
                f"CFL violated: dt={self.dt:.3e} > dx^2/(sigma^2 + c_B dx)="
                f"{self.max_stable_dt(sigma, drift_bound):.3e} (J={self.J}, M={self.M})"
            )

    @classmethod
    def for_model(cls, model, J: int, multiple: int = 100) -> "GridSpec":
        """Smallest CFL-stable grid with ``J`` cells whose M is a multiple of ``multiple``.

        The step stays a little inside the limit: exactly at it the explicit
        sweep leaves the odd-even grid mode undamped.
        """
        dx = model.L / J
        dt_max = CFL_SAFETY * dx**2 / (model.sigma**2 + model.drift_bound * dx)
        M = max(1, math.ceil(model.T / dt_max))
        M = multiple * math.ceil(M / multiple)
        return cls(J=J, M=M, L=model.L, T=model.T)

    def coarsen(self, M: int) -> "GridSpec":
        """Same space lattice, ``M`` time steps; ``M`` must divide ``self.M``."""
        if self.M % M:
            raise DomainError(f"M={M} does not divide the fine step count {self.M}")
        return GridSpec(J=self.J, M=M, L=self.L, T=self.T)

    def nearest_node(self, x) -> np.ndarray:
        j = np.rint(np.asarray(x, dtype=float) / self.dx).astype(np.int64)
        return np.clip(j, 0, self.J)

    def nearest_layer(self, t) -> np.ndarray:
        m = np.rint(np.asarray(t, dtype=float) / self.dt).astype(np.int64)
        return np.clip(m, 0, self.M)


def node_positions(n_nodes: int, L: float) -> np.ndarray:
    """Node coordinates of a uniform grid on [0, L] with ``n_nodes`` nodes."""
    return np.linspace(0.0, L, n_nodes)


def delta(grid: GridSpec, x0: float) -> np.ndarray:
    w = np.zeros(grid.J + 1)
    w[int(grid.nearest_node(x0))] = 1.0
    return w


def check_probability(eta, tol: float = 1e-9) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    if eta.ndim != 1 or eta.size < 2:
        raise DomainError("a measure is a 1-D weight vector with at least two nodes")
    if np.any(eta < -tol) or abs(eta.sum() - 1.0) > tol:
        raise DomainError(f"weights are not a probability vector (sum={eta.sum():.16g})")
    return eta


@dataclass(frozen=True, eq=False)
class MeasureFlow:
    """Row ``m`` holds the weights of nu(t_m) over the space nodes."""

    weights: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.grid.M + 1, self.grid.J + 1):
            raise DomainError(
                f"flow shape {w.shape} does not match grid ({self.grid.M + 1}, {self.grid.J + 1})"
            )
        object.__setattr__(self, "weights", w)

    def __getitem__(self, m) -> np.ndarray:
        return self.weights[m]

    def validate(self, tol: float = ROW_TOL) -> "MeasureFlow":
        if np.any(self.weights < -tol):
            raise DomainError("flow has negative weights")
        err = np.abs(self.weights.sum(axis=1) - 1.0).max()
        if err > tol:
            raise DomainError(f"flow rows are not normalized (max error {err:.3e})")
        return self

    @classmethod
    def constant(cls, grid: GridSpec, eta) -> "MeasureFlow":
        eta = np.asarray(eta, dtype=float)
        return cls(np.tile(eta, (grid.M + 1, 1)), grid)

    def coarsen(self, grid: GridSpec) -> "MeasureFlow":
        """Restrict to the time stamps of a coarser grid with the same space lattice."""
        if grid.J != self.grid.J or grid.L != self.grid.L or grid.T != self.grid.T:
            raise DomainError("coarsening needs the same space lattice and horizon")
        if self.grid.M % grid.M:
            raise DomainError(f"M={grid.M} does not divide {self.grid.M}")
        stride = self.grid.M // grid.M
        return MeasureFlow(self.weights[::stride].copy(), grid)

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.weights, axis=1)


def _same_support(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DomainError(f"measures live on different grids ({a.shape[-1]} vs {b.shape[-1]} nodes)")


def w1(eta, eta_prime, L: float) -> float:
    """W1 distance between two weight vectors on the same uniform grid of [0, L]."""
    a = np.asarray(eta, dtype=float)
    b = np.asarray(eta_prime, dtype=float)
    _same_support(a, b)
    dx = L / (a.size - 1)
    # F is a step function, constant on [x_j, x_{j+1}); its last jump sits at L
    diff = np.cumsum(a - b)[:-1]
    return float(np.abs(diff).sum() * dx)


def _rowwise_w1(F: np.ndarray, G: np.ndarray, dx: float) -> np.ndarray:
    return np.abs(F[..., :-1] - G[..., :-1]).sum(axis=-1) * dx


def _check_same_grid(nu: MeasureFlow, nu_prime: MeasureFlow) -> None:
    if nu.grid != nu_prime.grid:
        raise DomainError(f"flows live on different grids: {nu.grid} vs {nu_prime.grid}")


def flow_distance(nu: MeasureFlow, nu_prime: MeasureFlow) -> float:
    """sup over time stamps of W1(nu(t_m), nu'(t_m))."""
    _check_same_grid(nu, nu_prime)
    return float(_rowwise_w1(nu.cdf(), nu_prime.cdf(), nu.grid.dx).max())


def holder_constant(nu: MeasureFlow, max_layers: int = 401, dense_lags: int = 64) -> float:
    """max over grid pairs s < t of W1(nu(t), nu(s)) / (t - s)^(1/2).

    Flows with at most ``max_layers`` time stamps are scanned over every pair.
    Longer flows are scanned over every pair with lag <= ``dense_lags`` steps,
    plus every pair of an evenly strided subset of about ``max_layers`` stamps.
    """
    F = nu.cdf()
    dt, dx = nu.grid.dt, nu.grid.dx
    n = F.shape[0]
    if n < 2:
        return 0.0
    if n <= max_layers:
        return _pair_scan(F, np.arange(n), dt, dx, n - 1)
    best = _pair_scan(F, np.arange(n), dt, dx, dense_lags)
    stride = math.ceil((n - 1) / (max_layers - 1))
    idx = np.unique(np.r_[np.arange(0, n, stride), n - 1])
    return max(best, _pair_scan(F, idx, dt, dx, len(idx) - 1))


def _pair_scan(F: np.ndarray, idx: np.ndarray, dt: float, dx: float, max_lag: int) -> float:
    sub = F[idx]
    times = idx * dt
    best = 0.0
    for lag in range(1, min(max_lag, len(idx) - 1) + 1):
        d = _rowwise_w1(sub[lag:], sub[:-lag], dx)
        ratio = d / np.sqrt(times[lag:] - times[:-lag])
        best = max(best, float(ratio.max()))
    return best


def mix_flows(nu: MeasureFlow, nu_prime: MeasureFlow, omega: float) -> MeasureFlow:
    """Row-wise convex combination (1 - omega) nu + omega nu'."""
    if not 0.0 <= omega <= 1.0:
        raise DomainError(f"mixing weight must lie in [0, 1], got {omega}")
    _check_same_grid(nu, nu_prime)
    if omega == 0.0:
        return MeasureFlow(nu.weights.copy(), nu.grid)
    if omega == 1.0:
        return MeasureFlow(nu_prime.weights.copy(), nu.grid)
    return MeasureFlow((1.0 - omega) * nu.weights + omega * nu_prime.weights, nu.grid)


def histogram(values, grid: GridSpec) -> np.ndarray:
    """Nearest-node histogram of point values, normalized to a probability vector."""
    j = grid.nearest_node(values)
    counts = np.bincount(j.ravel(), minlength=grid.J + 1).astype(float)
    return counts / counts.sum()
