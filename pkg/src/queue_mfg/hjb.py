"""Explicit upwind finite differences for the HJB equation with Neumann data.

The backward sweep solves

    -V_t - H(t, nu(t), x, V_x) - (sigma^2 / 2) V_xx = 0,   V(T, .) = g(nu(T), .),
    V_x(t, 0) = -y(t, nu(t)),   V_x(t, L) = r(t, nu(t)),

with ghost nodes mirrored about each boundary and shifted by the boundary data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalError
from .measures import GridSpec, MeasureFlow
from .model import ModelSpec, control_argmin


@dataclass(frozen=True, eq=False)
class ValueField:
    values: np.ndarray
    grid: GridSpec
    nu: MeasureFlow

    def sanity_bound(self, model: ModelSpec, K: float) -> float:
        g = self.grid
        t, x = g.t[:, None], g.x[None, :]
        u = np.linspace(model.u_min, model.u_max, 9)
        f_sup = max(
            float(np.abs(model.f(t, self.nu[-1], x, ui)).max()) for ui in u
        )
        y_sup = max(abs(model.y(tm, self.nu[m])) for m, tm in enumerate(g.t))
        r_sup = max(abs(model.r(tm, self.nu[m])) for m, tm in enumerate(g.t))
        g_sup = float(np.abs(model.g(self.nu[-1], g.x)).max())
        return (f_sup + y_sup * K + r_sup * K) * g.T + g_sup


@dataclass(frozen=True, eq=False)
class PolicyField:
    controls: np.ndarray
    grid: GridSpec


def upwind_hamiltonian(model: ModelSpec, t, x, p_fwd, p_bwd):
    """Monotone upwind evaluation of min_u [f1 + b p] from one-sided gradients.

    The forward difference is kept when its minimizer drifts right, the
    backward one when its minimizer drifts left; if both qualify the smaller
    value wins (forward on ties).  If neither qualifies, the myopic control
    (argmin at p = 0) is used with its own upwind gradient.
    Returns (value, control).
    """
    u_f = control_argmin(model, t, x, p_fwd)
    u_b = control_argmin(model, t, x, p_bwd)
    b_f = model.drift(t, x, u_f)
    b_b = model.drift(t, x, u_b)
    h_f = model.f1(t, x, u_f) + b_f * p_fwd
    h_b = model.f1(t, x, u_b) + b_b * p_bwd
    ok_f = b_f >= 0
    ok_b = b_b <= 0
    take_f = ok_f & (~ok_b | (h_f <= h_b))
    h = np.where(take_f, h_f, h_b)
    u = np.where(take_f, u_f, u_b)
    neither = ~(ok_f | ok_b)
    if neither.any():
        xs = np.broadcast_to(x, neither.shape)[neither]
        u0 = control_argmin(model, t, xs, np.zeros(xs.shape))
        b0 = model.drift(t, xs, u0)
        p0 = np.where(b0 >= 0, p_fwd[neither], p_bwd[neither])
        h[neither] = model.f1(t, xs, u0) + b0 * p0
        u[neither] = u0
    return h, u


def solve_hjb(model: ModelSpec, grid: GridSpec, nu: MeasureFlow) -> ValueField:
    """Backward explicit sweep; each layer uses data at the later time stamp."""
    grid.check_cfl(model.sigma, model.drift_bound)
    if nu.grid != grid:
        raise DomainError("environment flow lives on a different grid")
    J, M, dx, dt = grid.J, grid.M, grid.dx, grid.dt
    x, t = grid.x, grid.t
    half_s2 = 0.5 * model.sigma**2
    V = np.empty((M + 1, J + 1))
    V[M] = model.g(nu[M], x)
    if not np.all(np.isfinite(V[M])):
        raise NumericalError("non-finite terminal cost", (M, int(np.argmin(np.isfinite(V[M])))))
    ext = np.empty(J + 3)
    for m in range(M - 1, -1, -1):
        tn, eta, Vn = t[m + 1], nu[m + 1], V[m + 1]
        ext[1:-1] = Vn
        ext[0] = Vn[1] + 2.0 * dx * model.y(tn, eta)
        ext[-1] = Vn[J - 1] + 2.0 * dx * model.r(tn, eta)
        p_fwd = (ext[2:] - Vn) / dx
        p_bwd = (Vn - ext[:-2]) / dx
        lap = (ext[2:] - 2.0 * Vn + ext[:-2]) / dx**2
        h, _ = upwind_hamiltonian(model, tn, x, p_fwd, p_bwd)
        V[m] = Vn + dt * (model.f0(tn, eta, x) + h + half_s2 * lap)
        if not np.isfinite(V[m]).all():
            raise NumericalError("non-finite value", (m, int(np.argmin(np.isfinite(V[m])))))
    return ValueField(V, grid, nu)


def gradient(V: np.ndarray, dx: float) -> np.ndarray:
    """Central differences inside, second-order one-sided differences at both ends."""
    D = np.empty_like(V)
    D[..., 1:-1] = (V[..., 2:] - V[..., :-2]) / (2.0 * dx)
    D[..., 0] = (-3.0 * V[..., 0] + 4.0 * V[..., 1] - V[..., 2]) / (2.0 * dx)
    D[..., -1] = (3.0 * V[..., -1] - 4.0 * V[..., -2] + V[..., -3]) / (2.0 * dx)
    return D


def extract_policy(model: ModelSpec, grid: GridSpec, nu: MeasureFlow, V: ValueField) -> PolicyField:
    if V.grid != grid or nu.grid != grid:
        raise DomainError("value field, flow and grid disagree")
    if grid.J < 2:
        raise DomainError("policy extraction needs J >= 2")
    DV = gradient(V.values, grid.dx)
    t, x = grid.t, grid.x
    # ghost-corrected central differences at the ends reduce to the Neumann data;
    # the terminal layer keeps the one-sided slope of g
    for m in range(grid.M):
        DV[m, 0] = -model.y(t[m], nu[m])
        DV[m, -1] = model.r(t[m], nu[m])
    if model.argmin is not None:
        controls = np.asarray(control_argmin(model, t[:, None], x[None, :], DV), dtype=float)
        controls = np.broadcast_to(controls, DV.shape).copy()
    else:
        controls = np.empty_like(DV)
        for m in range(grid.M + 1):
            controls[m] = control_argmin(model, t[m], x, DV[m])
    return PolicyField(controls, grid)
