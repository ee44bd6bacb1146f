"""Best-response map and the damped fixed-point loop on marginal flows."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ConvergenceError, DomainError
from .forward import propagate_fp
from .hjb import PolicyField, ValueField, extract_policy, solve_hjb
from .measures import GridSpec, MeasureFlow, delta, flow_distance, holder_constant, mix_flows
from .model import ModelSpec, control_argmin

INITIAL_GUESSES = ("uncontrolled", "delta")


@dataclass(frozen=True, eq=False)
class MFGSolution:
    nu_bar: MeasureFlow
    value: ValueField
    policy: PolicyField
    value_at_start: float
    residual: float
    iterations: int
    holder: float
    tol: float
    omega: float
    initial: str
    history: list = field(default_factory=list)  # flow_distance(nu_k, Phi(nu_k)) per iterate
    holder_history: list = field(default_factory=list)  # holder_constant(Phi(nu_k)) per iterate

    @property
    def grid(self) -> GridSpec:
        return self.nu_bar.grid


def start_law(model: ModelSpec, grid: GridSpec) -> np.ndarray:
    return delta(grid, model.x0)


def phi_map(model: ModelSpec, grid: GridSpec, nu: MeasureFlow):
    """Best response to ``nu`` and the law it induces: (flow, value, policy)."""
    V = solve_hjb(model, grid, nu)
    policy = extract_policy(model, grid, nu, V)
    flow = propagate_fp(model, grid, policy, nu, start_law(model, grid))
    return flow, V, policy


def residual(model: ModelSpec, grid: GridSpec, nu: MeasureFlow) -> float:
    return flow_distance(nu, phi_map(model, grid, nu)[0])


def myopic_policy(model: ModelSpec, grid: GridSpec) -> PolicyField:
    """Pointwise minimizer of the control cost alone (gradient set to zero)."""
    t, x = grid.t[:, None], grid.x[None, :]
    u = control_argmin(model, t, x, np.zeros((grid.M + 1, grid.J + 1)))
    return PolicyField(np.broadcast_to(np.asarray(u, dtype=float), (grid.M + 1, grid.J + 1)).copy(), grid)


def initial_flow(model: ModelSpec, grid: GridSpec, kind: str = "uncontrolled") -> MeasureFlow:
    """``uncontrolled``: law of the diffusion under the myopic control; ``delta``: mass frozen at x0."""
    eta0 = start_law(model, grid)
    frozen = MeasureFlow.constant(grid, eta0)
    if kind == "delta":
        return frozen
    if kind == "uncontrolled":
        return propagate_fp(model, grid, myopic_policy(model, grid), frozen, eta0)
    raise ConfigurationError(f"unknown initial guess {kind!r}; valid: {list(INITIAL_GUESSES)}")


def solve_mfg(model: ModelSpec, grid: GridSpec, tol: float, max_iters: int = 50, omega: float = 0.5,
              initial: str = "uncontrolled", log=None) -> MFGSolution:
    """Damped Picard iteration ``nu <- (1 - omega) nu + omega Phi(nu)``.

    Stops at the first iterate whose distance to its own image is at most
    ``tol`` and returns that iterate with the value and policy solved
    against it.  ``log``, if given, is called with ``(k, residual)``.
    """
    if not tol > 0:
        raise DomainError(f"tol must be > 0, got {tol}")
    if not 0 < omega <= 1:
        raise DomainError(f"omega must lie in (0, 1], got {omega}")
    if max_iters < 1:
        raise DomainError("max_iters must be >= 1")
    nu = initial_flow(model, grid, initial)
    history, holders = [], []
    for k in range(1, max_iters + 1):
        flow, V, policy = phi_map(model, grid, nu)
        res = flow_distance(nu, flow)
        history.append(res)
        holders.append(holder_constant(flow))
        if log is not None:
            log(k, res)
        if res <= tol:
            return MFGSolution(
                nu_bar=nu, value=V, policy=policy,
                value_at_start=float(V.values[0, grid.nearest_node(model.x0)]),
                residual=res, iterations=k, holder=holder_constant(nu),
                tol=tol, omega=omega, initial=initial,
                history=history, holder_history=holders,
            )
        nu = mix_flows(nu, flow, omega)
    raise ConvergenceError(
        f"no fixed point within {max_iters} iterations (last residual {history[-1]:.3e}, tol {tol:.3e})",
        history,
    )
